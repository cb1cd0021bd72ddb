import numpy as np
import pytest

from lowrank_dork.manifold import (
    CSV_FIELDS,
    AffineTarget,
    ErrorReport,
    LowRankState,
    error_metrics,
    manifold_project,
    perp,
    tangent_project,
)
from lowrank_dork.matcore import Factored

from conftest import random_state


def _tangent_oracle(x, d):
    # P_T(D) = P_U D + D P_V - P_U D P_V with P_V the projector on range(Z)
    pu = x.u @ x.u.T
    v = np.linalg.qr(x.z)[0]
    pv = v @ v.T
    return pu @ d + d @ pv - pu @ d @ pv


def test_state_basics(rng):
    x = random_state(rng, 8, 6, 3)
    assert x.rank == 3 and x.shape == (8, 6)
    assert x.norm() == pytest.approx(np.linalg.norm(x.reconstruct()))
    assert x.orthonormality_defect() < 1e-14
    np.testing.assert_allclose(x.as_factored().toarray(), x.reconstruct())
    with pytest.raises(ValueError):
        LowRankState(np.zeros((4, 2)), np.zeros((3, 3)))


def test_target_displacements(rng):
    x = random_state(rng, 8, 6, 3)
    y = random_state(rng, 8, 6, 2)
    d = rng.standard_normal((8, 6))
    f = Factored(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
    for direction in (d, f):
        tgt = AffineTarget(x, direction, 0.1)
        chi = x.reconstruct() + 0.1 * (direction.toarray() if isinstance(direction, Factored) else direction)
        np.testing.assert_allclose(tgt.chi(), chi)
        got = tgt.displacement_from(y)
        got = got.toarray() if isinstance(got, Factored) else got
        np.testing.assert_allclose(got, chi - y.reconstruct(), atol=1e-13)
        assert tgt.norm() == pytest.approx(np.linalg.norm(chi))
    assert isinstance(AffineTarget(x, f, 0.1).displacement_from(y), Factored)
    with pytest.raises(ValueError):
        AffineTarget(x, np.zeros((3, 3)))


def test_tangent_projection_matches_oracle(rng):
    x = random_state(rng, 9, 7, 3)
    d = rng.standard_normal((9, 7))
    p = tangent_project(x, d)
    np.testing.assert_allclose(p, _tangent_oracle(x, d), atol=1e-12)
    np.testing.assert_allclose(tangent_project(x, p), p, atol=1e-12)
    # the residual is orthogonal to the tangent space
    assert abs(np.sum((d - p) * p)) < 1e-12
    np.testing.assert_allclose(tangent_project(x, Factored(d, np.eye(7))), p, atol=1e-12)


def test_manifold_project_is_truncated_svd(rng):
    a = rng.standard_normal((10, 8))
    u, s, vt = np.linalg.svd(a)
    x = manifold_project(a, 3)
    np.testing.assert_allclose(x.reconstruct(), (u[:, :3] * s[:3]) @ vt[:3], atol=1e-12)
    assert x.orthonormality_defect() < 1e-13


def test_perp(rng):
    u = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    m = rng.standard_normal((6, 3))
    np.testing.assert_allclose(u.T @ perp(u, m), 0, atol=1e-14)


def test_error_metrics(rng):
    x = random_state(rng, 9, 7, 2)
    tgt = AffineTarget(x, rng.standard_normal((9, 7)), 0.1)
    chi = tgt.chi()
    s = np.linalg.svd(chi, compute_uv=False)
    best = manifold_project(chi, 2)
    m = error_metrics(best, tgt, full=chi)
    assert m["eps_pr"] < 1e-12
    assert m["eps_N"] == pytest.approx(np.sqrt(np.sum(s[2:] ** 2)))
    assert m["eps_l"] == pytest.approx(m["eps_N"])
    assert m["eps_tot"] == pytest.approx(m["eps_N"])
    assert m["eps_D"] is None
    m0 = error_metrics(x, tgt)
    assert m0["eps_l"] >= m0["eps_N"] and m0["eps_tot"] is None


def test_report_csv_round_trip():
    rep = ErrorReport()
    rep.add(0.0, 3, eps_l=0.5, eps_pr=1e-3)
    rep.add(0.1, 4, wall_s=0.2, eps_tot=1.0 / 3.0)
    text = rep.to_csv(header_comment="config: a=1\nseed: 0")
    assert text.startswith("# config: a=1\n# seed: 0\n")
    assert text.splitlines()[2] == ",".join(CSV_FIELDS)
    back = ErrorReport.from_csv(text)
    assert back.records[1]["eps_tot"] == 1.0 / 3.0
    assert back.records[1]["wall_s"] is None  # timing off
    assert back.to_csv() == rep.to_csv()
    assert "0.2" in rep.to_csv(timing=True).splitlines()[-1]
    assert np.isnan(rep.column("eps_pr")[1]) and len(rep) == 2 and rep.final["rank"] == 4


def test_report_rejects_bad_values():
    rep = ErrorReport()
    for bad in (float("nan"), float("inf"), -1.0):
        with pytest.raises(FloatingPointError):
            rep.add(0.0, 1, eps_l=bad)


def test_report_status_line():
    rep = ErrorReport(status="DNC", diagnostic="t=0: boom")
    rep.add(0.0, 1)
    assert "# status: DNC: t=0: boom" in rep.to_csv()
    assert not rep.converged
