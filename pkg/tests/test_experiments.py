import numpy as np
import pytest

from lowrank_dork.experiments import (
    AdvDiffProblem,
    CFLViolation,
    FisherKppProblem,
    LeapfrogUnstable,
    OscillatorProblem,
    child_rng,
    fit_slope,
    format_table,
    parallel_map,
    run_fisher_kpp,
    run_oscillator,
    run_rank_discovery,
    run_retraction_convergence,
)
from lowrank_dork.experiments.advdiff import gaussian_field, rises_then_falls, run_advdiff, table4
from lowrank_dork.experiments.common import ExperimentResult, max_workers, resolve_variant
from lowrank_dork.experiments.fisher_kpp import mc_reference, run_fixed_rank
from lowrank_dork.experiments.oscillator import reference_check, table3
from lowrank_dork.manifold import ErrorReport, manifold_project
from lowrank_dork.matcore import Factored


def test_child_streams_are_independent_and_stable():
    a = child_rng(3, "x").random(4)
    np.testing.assert_array_equal(a, child_rng(3, "x").random(4))
    assert not np.allclose(a, child_rng(3, "y").random(4))
    assert not np.allclose(a, child_rng(4, "x").random(4))


def test_fit_slope():
    x = np.geomspace(1e-3, 1e-1, 5)
    assert fit_slope(x, 3 * x**2.5) == pytest.approx(2.5)
    assert fit_slope(x, np.r_[1e-20, 3 * x[1:] ** 2], floor=1e-15) == pytest.approx(2.0)
    assert np.isnan(fit_slope(x[:1], x[:1]))


def test_parallel_map_keeps_order(monkeypatch):
    monkeypatch.setenv("LOWRANK_DORK_THREADS", "3")
    assert max_workers() == 3
    assert parallel_map(lambda v: v * v, range(7)) == [v * v for v in range(7)]
    monkeypatch.setenv("LOWRANK_DORK_THREADS", "0")
    with pytest.raises(ValueError):
        max_workers()


def test_variants():
    assert resolve_variant("so_dork_exact_inverse", "pseudoinverse") == ("so_dork", "none")
    assert resolve_variant("gd_dork", "span_only") == ("gd_dork", "span_only")
    with pytest.raises(ValueError):
        resolve_variant("nope", "none")


def test_summary_csv_and_table():
    res = ExperimentResult("demo", summary=[{"a": 1, "b": 0.5}, {"a": 2, "c": None}])
    text = res.summary_csv(header_comment="seed: 0")
    assert text.splitlines() == ["# seed: 0", "a,b,c", "1,0.5,", "2,,"]
    assert "5.000e-01" in format_table(res.summary)
    res.reports["x"] = ErrorReport(status="DNC", diagnostic="boom")
    assert res.status == "DNC" and res.failures == {"x": "boom"}


def test_retraction_convergence_small():
    res = run_retraction_convergence(seed=1, dims=(60, 40), ranks=(4, 20), dt_grid=np.geomspace(1e-1, 1e-3, 5))
    slopes = {row["variant"]: row["slope"] for row in res.summary}
    for k in (1, 2, 3, 4):
        assert slopes[f"order{k}"] == pytest.approx(k + 1, abs=0.35)
    assert slopes["span_only"] == pytest.approx(2, abs=0.35)
    assert len(res.reports["order1"]) == 5
    with pytest.raises(ValueError):
        run_retraction_convergence(dt_grid=(1e-3, 1e-2))


def test_oscillator_problem_analytic_solution():
    prob = OscillatorProblem.draw(5)
    assert prob.s.shape == (26,) and np.all(np.diff(prob.s) < 0)
    assert prob.condition_number > 1e14
    # the stacked solution solves d/dt Y = A Y (central difference oracle)
    t, h = 1.3, 1e-5
    deriv = (prob.exact(t + h) - prob.exact(t - h)) / (2 * h)
    np.testing.assert_allclose(deriv, prob.a @ prob.exact(t), atol=1e-5 * np.abs(deriv).max())
    # direct block evaluation
    y0 = prob.exact(0.0)
    np.testing.assert_allclose(y0[:26], prob.q * prob.s, atol=1e-12)
    np.testing.assert_array_equal(prob.q, OscillatorProblem.draw(5).q)
    f = prob.rhs()(Factored(y0, np.eye(26)), 0.0)
    np.testing.assert_allclose(f.toarray(), prob.a @ y0)


def test_oscillator_reference_rk4():
    prob = OscillatorProblem.draw(0, t_final=1.0)
    assert reference_check(prob, dt=1e-3) < 1e-8


def test_oscillator_targeted_run():
    res = run_oscillator(seed=1, nts=(50,), schemes=("so_dork", "full_rank"), orders=(2,), sweep_nts=(),
                         check_reference=False)
    assert sorted(res.reports) == ["full_rank-o2-nt50", "so_dork-o2-nt50"]
    assert len(res.reports["so_dork-o2-nt50"]) == 51
    rows = table3(res, nts=(50,), schemes=("so_dork",))
    assert rows[0]["so_dork"] > 0


def test_advdiff_initial_field_matches_direct_evaluation():
    prob = AdvDiffProblem(n=32)
    g = np.arange(32) / 32
    direct = np.zeros((32, 32))
    amps = [1, 1, 1, 2, 1, 1, 1]
    mx = [0.5, 0.3, 0.354, 0.4, 0.15, 0.65, 0.35]
    my = [0.5, 0.5, 0.5, 0.35, 0.65, 0.25, 0.65]
    w = [200, 500, 400, 400, 400, 450, 450]
    for i in range(32):
        for j in range(32):
            direct[i, j] = sum(a * np.exp(-((g[i] - x) ** 2 + (g[j] - y) ** 2) * s / 2)
                               for a, x, y, s in zip(amps, mx, my, w))
    np.testing.assert_allclose(prob.initial(), direct, rtol=0, atol=1e-14)
    lit = gaussian_field(g, g, "variance")
    assert np.ptp(lit) < 1e-2 * lit.max()  # literal widths give an almost flat field
    with pytest.raises(ValueError):
        gaussian_field(g, g, "other")


def test_advdiff_factored_rhs_matches_dense(rng):
    prob = AdvDiffProblem(n=32)
    x = manifold_project(prob.initial(), 4)
    f = prob.rhs()
    np.testing.assert_allclose(f(x, 0.0).toarray(), f(x.reconstruct(), 0.0), atol=1e-9)
    assert prob.velocity_ranks == (4, 4)
    assert AdvDiffProblem(n=32, velocity_rank=4, velocity_threshold=0.5).velocity_ranks[0] < 4


def test_advdiff_cfl_check():
    with pytest.raises(CFLViolation):
        run_advdiff(n=64, dt=0.05, t_final=0.1)


def test_advdiff_small_run_and_dnc():
    res = run_advdiff(ranks=(3,), schemes=("so_dork", "gd_dork", "so_dork_exact_inverse"), n=32, dt=1e-2,
                      t_final=0.1)
    rows = table4(res)
    assert rows[0]["so_dork"] > 0 and rows[0]["gd_dork"] > 0
    assert len(res.reports["so_dork-r3"]) == 11


def test_rises_then_falls():
    assert rises_then_falls([5, 7, 9, 8, 6])
    assert not rises_then_falls([5, 7, 9, 9])
    assert not rises_then_falls([5, 5, 4])


def test_fisher_problem_properties():
    prob = FisherKppProblem(nx=60, n_time=201, n_mc=12, t_final=4.0, seed=2)
    ref = mc_reference(prob, record_every=50)
    assert sorted(ref) == [0, 50, 100, 150, 200]
    assert ref[200].min() > -1e-8 and ref[200].max() < 1.0 + 1e-6
    assert not np.allclose(ref[200][:, 0], ref[200][:, 1])
    # zero flux: the constant state 1 is a fixed point of the scheme
    one = np.ones((60, 12))
    np.testing.assert_allclose(prob.advance(one, one), one, atol=1e-12)
    with pytest.raises(LeapfrogUnstable):
        FisherKppProblem(nx=20, n_time=3, n_mc=2, t_final=10.0).check_stability()


def test_fisher_degenerate_randomness_is_rank_one():
    ranges = {"a_range": (0.3, 0.3), "b_range": (0.5, 0.5), "r_range": (0.4, 0.4)}
    errs = []
    for n_time in (201, 401):
        prob = FisherKppProblem(nx=60, n_time=n_time, n_mc=10, t_final=4.0, **ranges)
        ref = mc_reference(prob)
        assert np.linalg.matrix_rank(ref[n_time - 1], tol=1e-10 * np.linalg.norm(ref[n_time - 1])) == 1
        # one first-order retraction per step leaves an O(dt) error, two are exact on rank one
        errs.append(run_fixed_rank(prob, ref, rank=1, n_iters=1).records[-1]["eps_tot"])
        assert run_fixed_rank(prob, ref, rank=1, n_iters=2).records[-1]["eps_tot"] < 1e-12
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_fisher_small_run():
    res = run_fisher_kpp(nx=60, n_time=401, n_mc=20, t_final=5.0, rank=6, rank0=10, record_every=100,
                         modes=("best_approximation", "exact_projection", "fixed_rank", "mc_reference"))
    final = {row["run"]: row["final_error"] for row in res.summary}
    assert final["fixed-it2"] <= final["fixed-it1"]
    assert final["best_approximation"] <= final["exact_projection"] * 1.01
    with pytest.raises(ValueError):
        run_fisher_kpp(modes=("bogus",))


def test_rank_discovery_small():
    res = run_rank_discovery(seed=1, dims=(60, 40), rank=3, direction_rank=9, r_inc=4, r_max=30)
    last = res.summary[-1]
    assert last["rank"] == 12 and last["eps_l"] <= 1e-6
    assert [row["truncated"] for row in res.summary[:-1]] == [False] * (len(res.summary) - 1)


def test_fisher_threaded_runs_match_serial(monkeypatch):
    kw = dict(seed=3, nx=40, n_time=201, n_mc=20, t_final=4.0, rank=4, rank0=6,
              modes=("fixed_rank", "exact_projection"))
    monkeypatch.setenv("LOWRANK_DORK_THREADS", "1")
    serial = run_fisher_kpp(**kw)
    monkeypatch.setenv("LOWRANK_DORK_THREADS", "3")
    threaded = run_fisher_kpp(**kw)
    for key, rep in serial.reports.items():
        assert np.array_equal(rep.column("eps_tot"), threaded.reports[key].column("eps_tot"))
