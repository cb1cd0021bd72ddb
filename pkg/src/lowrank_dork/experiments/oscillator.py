"""Linear oscillators with an ill-conditioned singular profile.

The 26 coordinates form 13 rotating pairs. The state is stacked as
``[X; dX/dt]`` (52 x 26) so the dynamics are the first-order linear system
``d/dt [X; V] = [[0, I], [-Omega^2, 0]] [X; V]`` and the analytic solution is
``[R(t); R(t) W] Q S``.
"""

from dataclasses import dataclass, field

import numpy as np

from ..dork import IntegratorSpec, RhsOracle, integrate, step_full_rank
from ..manifold import manifold_project
from ..matcore import Factored, orth
from .common import ExperimentResult, child_rng, fit_slope, parallel_map, resolve_variant

TABLE_NTS = (50, 134, 968)
SWEEP_NTS = (50, 100, 200, 400, 800)
ORDER2_SCHEMES = ("projected_rk", "projector_splitting", "so_dork", "gd_dork")


@dataclass(frozen=True)
class OscillatorProblem:
    """One random draw of frequencies, singular profile and basis."""

    omega: np.ndarray
    s: np.ndarray
    q: np.ndarray
    t_final: float = 10.0
    rank: int = 16
    a: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.dim
        a = np.zeros((2 * n, 2 * n))
        a[:n, n:] = np.eye(n)
        a[n:, :n] = -np.diag(np.repeat(self.omega, 2) ** 2)
        object.__setattr__(self, "a", a)

    @classmethod
    def draw(cls, seed, t_final=10.0, rank=16, pairs=13, n_large=14):
        rng = child_rng(seed, "oscillator-problem")
        omega = rng.standard_normal(pairs)
        z = rng.standard_normal(n_large)
        n = 2 * pairs
        i = np.arange(n_large + 1, n + 1)
        tail = 10.0 ** (-5.0 * (1.0 + (i - n_large) / 12.0))
        s = np.concatenate([np.sort(100.0 + 10.0 * z)[::-1], tail])
        q = orth(rng.random((n, n))).q
        return cls(omega, s, q, t_final, rank)

    @property
    def dim(self):
        return 2 * len(self.omega)

    @property
    def condition_number(self):
        """``(S_11 / S_rr)^2`` for the retained rank."""
        return float((self.s[0] / self.s[self.rank - 1]) ** 2)

    def _blocks(self, t):
        n = self.dim
        rot = np.zeros((n, n))
        gen = np.zeros((n, n))
        for k, w in enumerate(self.omega):
            c, sn = np.cos(w * t), np.sin(w * t)
            sl = slice(2 * k, 2 * k + 2)
            rot[sl, sl] = [[c, -sn], [sn, c]]
            gen[sl, sl] = [[0.0, -w], [w, 0.0]]
        return rot, gen

    def exact(self, t):
        rot, gen = self._blocks(t)
        return np.vstack([rot, rot @ gen]) @ self.q * self.s

    def rhs(self):
        a = self.a

        def fn(x, t):
            if isinstance(x, Factored):
                return Factored(a @ x.a, x.b)
            return a @ x

        return RhsOracle(fn, linear=True)

    def initial(self):
        return manifold_project(self.exact(0.0), self.rank)


def _error_observer(prob, scale):
    def obs(t, x):
        xd = x.reconstruct() if hasattr(x, "reconstruct") else x
        return {"eps_tot": float(np.linalg.norm(xd - prob.exact(t)) / scale)}

    return obs


def run_single(prob, variant, nt, order=2, robust_mode="pseudoinverse", rel_cut=1e-9, stage_iters=None,
               descent=None, timing=False):
    """Integrate one variant over ``[0, t_final]`` with ``nt`` steps."""
    scheme, mode = resolve_variant(variant, robust_mode)
    kw = {} if descent is None else {"descent": descent}
    spec = IntegratorSpec(scheme, prob.t_final / nt, (0.0, prob.t_final), order=order,
                          robust_mode=mode, rel_cut=rel_cut, stage_iters=stage_iters, **kw)
    scale = np.linalg.norm(prob.exact(0.0))
    x0 = prob.exact(0.0) if scheme == "full_rank" else prob.initial()
    rep = integrate(spec, prob.rhs(), x0, [_error_observer(prob, scale)], timing=timing)
    rep.meta.update(nt=nt, robust_mode=mode, variant=variant)
    return rep


def reference_check(prob, dt=1e-3):
    """Relative error of dense RK4 at step ``dt`` against the analytic solution."""
    y = prob.exact(0.0)
    rhs = prob.rhs()
    n = int(round(prob.t_final / dt))
    for i in range(n):
        y = step_full_rank(y, rhs, i * dt, dt, 4)
    ref = prob.exact(prob.t_final)
    return float(np.linalg.norm(y - ref) / np.linalg.norm(ref))


def run_oscillator(seed=0, nts=TABLE_NTS, schemes=ORDER2_SCHEMES, orders=(1, 2, 3, 4), sweep_nts=SWEEP_NTS,
                   rank=16, t_final=10.0, robust_mode="pseudoinverse", rel_cut=1e-9, check_reference=True,
                   timing=False):
    """Order-2 table, DORK order curves and step sweeps.

    Every variant in ``schemes`` runs at every step count in
    ``nts`` and ``sweep_nts``; the DORK variants and the dense reference at
    every order in ``orders``, the baselines at order 2 only. Report keys
    are ``"<variant>-o<order>-nt<nt>"``. Summary rows hold the final
    normalized error per run plus one fitted slope per (variant, order).
    """
    prob = OscillatorProblem.draw(seed, t_final=t_final, rank=rank)
    res = ExperimentResult("oscillator", meta={"seed": seed, "condition_number": prob.condition_number})
    all_nts = sorted(set(nts) | set(sweep_nts))
    jobs = []
    for var in schemes:
        scheme, _ = resolve_variant(var, robust_mode)
        var_orders = [2] if scheme in ("projected_rk", "projector_splitting") else orders
        for o in var_orders:
            jobs += [(var, o, nt) for nt in all_nts]
    jobs = sorted(set(jobs))

    def work(job):
        var, o, nt = job
        return run_single(prob, var, nt, order=o, robust_mode=robust_mode, rel_cut=rel_cut, timing=timing)

    for job, rep in zip(jobs, parallel_map(work, jobs)):
        res.reports[f"{job[0]}-o{job[1]}-nt{job[2]}"] = rep
    for var, o, nt in jobs:
        rep = res.reports[f"{var}-o{o}-nt{nt}"]
        res.summary.append({"scheme": var, "order": o, "nt": nt, "status": rep.status,
                            "final_error": rep.records[-1]["eps_tot"] if rep.converged else None})
    for var, o in sorted({(j[0], j[1]) for j in jobs}):
        if len(all_nts) < 2:
            continue
        reps = [res.reports[f"{var}-o{o}-nt{nt}"] for nt in all_nts]
        dts = [r.meta["dt"] for r in reps]
        ys = [r.records[-1]["eps_tot"] if r.converged else float("nan") for r in reps]
        res.summary.append({"scheme": var, "order": o, "nt": "sweep", "slope": fit_slope(dts, ys)})
    if check_reference:
        res.meta["reference_error"] = reference_check(prob)
    return res


def table3(res, nts=TABLE_NTS, schemes=ORDER2_SCHEMES):
    """Rows ``{nt, <scheme>: final error}`` in the layout of the published table."""
    rows = []
    for nt in nts:
        row = {"nt": nt}
        for sch in schemes:
            rep = res.reports.get(f"{sch}-o2-nt{nt}")
            if rep is not None:
                row[sch] = rep.records[-1]["eps_tot"] if rep.converged else "DNC"
        rows.append(row)
    return rows
