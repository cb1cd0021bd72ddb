"""Stochastic Fisher-KPP equation, one Monte Carlo realization per column.

``u_t = D u_xx + r(w) u (1 - u)`` on ``[0, L]`` with zero-flux ends, random
growth rate and a random Gaussian bump as initial condition. Time stepping
is Crank-Nicolson for diffusion over a leapfrog interval ``2 dt`` and
explicit leapfrog for the reaction; the first step is backward Euler for
diffusion with forward Euler for the reaction.
"""

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..descent import DescentConfig, descend_fixed
from ..manifold import AffineTarget, ErrorReport, manifold_project
from ..matcore import LowRankError
from ..rank_adapt import RankPolicy, rank_adaptive_retract
from ..retraction import RetractionConfig
from .common import ExperimentResult, child_rng, parallel_map

MODES = ("mc_reference", "fixed_rank", "exact_projection", "best_approximation", "adaptive")


class LeapfrogUnstable(ValueError):
    pass


@dataclass(frozen=True)
class FisherKppProblem:
    nx: int = 200
    n_time: int = 2001
    n_mc: int = 100
    length: float = 40.0
    t_final: float = 12.5
    diffusivity: float = 1.0
    a_range: tuple = (0.2, 0.4)
    b_range: tuple = (0.1, 1.1)
    r_range: tuple = (0.25, 0.5)
    seed: int = 0
    data: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rng = child_rng(self.seed, "fisher-mc-columns")
        a = rng.uniform(*self.a_range, self.n_mc)
        b = rng.uniform(*self.b_range, self.n_mc)
        r = rng.uniform(*self.r_range, self.n_mc)
        x = np.linspace(0.0, self.length, self.nx)
        h = x[1] - x[0]
        lap = np.diag(np.full(self.nx, -2.0)) + np.eye(self.nx, k=1) + np.eye(self.nx, k=-1)
        # ghost-point reflection for zero flux
        lap[0, 1] = 2.0
        lap[-1, -2] = 2.0
        lap /= h**2
        dt = self.dt
        eye = np.eye(self.nx)
        data = {
            "x": x, "a": a, "b": b, "r": r, "lap": lap,
            "implicit": sla.lu_factor(eye - dt * self.diffusivity * lap),
            "explicit": eye + dt * self.diffusivity * lap,
        }
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "_local", threading.local())

    @property
    def dt(self):
        return self.t_final / (self.n_time - 1)

    def check_stability(self, limit=0.5):
        """Leapfrog on ``u' = r u`` is only weakly stable; demand ``dt max r`` small."""
        val = self.dt * float(np.max(self.data["r"]))
        if val >= limit:
            raise LeapfrogUnstable(f"dt * max r = {val:.3g} must stay below {limit}")
        return val

    def initial(self):
        d = self.data
        return d["a"] * np.exp(-np.outer(d["x"] ** 2, d["b"]))

    def _implicit(self):
        # concurrent lu_solve calls on one shared factor corrupt results, so
        # each worker thread solves with its own copy
        local = self._local
        if not hasattr(local, "lu"):
            lu, piv = self.data["implicit"]
            local.lu = (lu.copy(), piv.copy())
        return local.lu

    def reaction(self, u):
        return self.data["r"] * u * (1.0 - u)

    def advance(self, prev, cur):
        """Next full state; ``prev is None`` selects the first-order start step."""
        d = self.data
        if prev is None:
            return sla.lu_solve(self._implicit(), cur + self.dt * self.reaction(cur))
        return sla.lu_solve(self._implicit(), d["explicit"] @ prev + 2.0 * self.dt * self.reaction(cur))


def mc_reference(prob, record_every=1):
    """Full solution at every ``record_every``-th time index plus the final one."""
    idx = _record_indices(prob, record_every)
    out = {0: prob.initial()}
    prev, cur = None, out[0]
    for k in range(1, prob.n_time):
        prev, cur = cur, prob.advance(prev, cur)
        if k in idx:
            out[k] = cur
    return out


def _record_indices(prob, every):
    if every < 1:
        raise ValueError("record_every must be >= 1")
    return set(range(0, prob.n_time, every)) | {prob.n_time - 1}


def _march(prob, ref, x0, step, record_every):
    """Drive a low-rank run through the leapfrog targets, recording errors against ``ref``."""
    idx = _record_indices(prob, record_every)
    rep = ErrorReport()
    dt = prob.dt
    scale = {k: float(np.linalg.norm(v)) for k, v in ref.items()}

    def record(k, x):
        rep.add(k * dt, x.rank, eps_tot=float(np.linalg.norm(x.reconstruct() - ref[k]) / scale[k]))

    prev, cur = None, x0
    k = 0
    try:
        record(0, cur)
        for k in range(1, prob.n_time):
            chi = prob.advance(None if prev is None else prev.reconstruct(), cur.reconstruct())
            nxt = step(cur, chi)
            if not np.all(np.isfinite(nxt.z)):
                raise FloatingPointError("non-finite state")
            prev, cur = cur, nxt
            if k in idx:
                record(k, cur)
    except (LowRankError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rep.status = "DNC"
        rep.diagnostic = f"t={k * dt:.6g}: {type(exc).__name__}: {exc}"
    rep.meta["state"] = cur
    return rep


def run_fixed_rank(prob, ref, rank=15, n_iters=1, robust_mode="span_only", rel_cut=1e-9, record_every=1):
    """Descent with ``n_iters`` first-order optimal retractions per step.

    The span-only form is the same retraction evaluated without inverting
    ``Z^T Z``, which is numerically singular here; ``"none"`` fails and
    ``"pseudoinverse"`` changes the result by the discarded directions.
    """
    cfg = DescentConfig(n_iters=n_iters, base=RetractionConfig(order=1, robust_mode=robust_mode, rel_cut=rel_cut))
    dt = prob.dt

    def step(cur, chi):
        target = AffineTarget(cur, (chi - cur.reconstruct()) / dt, dt)
        return descend_fixed(cur, target, cfg)

    rep = _march(prob, ref, manifold_project(prob.initial(), rank), step, record_every)
    rep.meta.update(mode="fixed_rank", rank=rank, n_iters=n_iters, robust_mode=robust_mode)
    return rep


def run_exact_projection(prob, ref, rank=15, record_every=1):
    """Truncated SVD of the full-rank step target at every step."""
    rep = _march(prob, ref, manifold_project(prob.initial(), rank),
                 lambda cur, chi: manifold_project(chi, rank), record_every)
    rep.meta.update(mode="exact_projection", rank=rank)
    return rep


def best_approximation(prob, ref, rank=15):
    """Truncated SVD of the reference itself at each recorded time."""
    rep = ErrorReport(meta={"mode": "best_approximation", "rank": rank})
    for k in sorted(ref):
        full = ref[k]
        approx = manifold_project(full, rank).reconstruct()
        rep.add(k * prob.dt, rank, eps_tot=float(np.linalg.norm(approx - full) / np.linalg.norm(full)))
    return rep


def run_adaptive(prob, ref, policy, rank0=29, descent=DescentConfig(n_max=8, delta_star=1e-16), record_every=1):
    """Rank-adaptive retraction with automatic descent toward each step target."""
    dt = prob.dt

    def step(cur, chi):
        return rank_adaptive_retract(cur, (chi - cur.reconstruct()) / dt, dt, policy, descent, auto=True)

    rep = _march(prob, ref, manifold_project(prob.initial(), rank0), step, record_every)
    rep.meta.update(mode="adaptive", rank0=rank0)
    return rep


DEFAULT_POLICY = RankPolicy(theta_star=0.05, sigma_star=1e-12, r_inc=5, r_max=30)


def run_fisher_kpp(seed=0, nx=200, n_time=2001, n_mc=100, t_final=12.5, rank=15, iters=(1, 2),
                   robust_mode="span_only", rel_cut=1e-9, policy=DEFAULT_POLICY, rank0=29,
                   descent=DescentConfig(n_max=8, delta_star=1e-16), record_every=10, modes=MODES,
                   ranges=None):
    """Reference, baselines, fixed-rank descent and adaptive runs.

    Report keys: ``best_approximation``, ``exact_projection``,
    ``fixed-it<k>`` per descent count and ``adaptive``. ``ranges`` may
    override the ``a``/``b``/``r`` sampling intervals (a degenerate interval
    gives identical columns).
    """
    unknown = set(modes) - set(MODES)
    if unknown:
        raise ValueError(f"unknown modes {sorted(unknown)}")
    prob = FisherKppProblem(nx, n_time, n_mc, t_final=t_final, seed=seed, **(ranges or {}))
    stab = prob.check_stability()
    ref = mc_reference(prob, record_every)
    final = ref[prob.n_time - 1]
    res = ExperimentResult("fisher-kpp", meta={"seed": seed, "dt": prob.dt, "dt_max_r": stab,
                                               "reference_range": (float(final.min()), float(final.max()))})
    pol = RankPolicy(**{**policy.__dict__, "seed": seed})
    jobs = []
    if "best_approximation" in modes:
        jobs.append(("best_approximation", lambda: best_approximation(prob, ref, rank)))
    if "exact_projection" in modes:
        jobs.append(("exact_projection", lambda: run_exact_projection(prob, ref, rank, record_every)))
    if "fixed_rank" in modes:
        for k in iters:
            jobs.append((f"fixed-it{k}", lambda k=k: run_fixed_rank(prob, ref, rank, k, robust_mode, rel_cut,
                                                                    record_every)))
    if "adaptive" in modes:
        jobs.append(("adaptive", lambda: run_adaptive(prob, ref, pol, rank0, descent, record_every)))
    if "mc_reference" in modes:
        rep = ErrorReport(meta={"mode": "mc_reference"})
        for k in sorted(ref):
            rep.add(k * prob.dt, int(np.linalg.matrix_rank(ref[k])), eps_tot=0.0)
        res.reports["mc_reference"] = rep
    for (key, _), rep in zip(jobs, parallel_map(lambda j: j[1](), jobs)):
        res.reports[key] = rep
        last = rep.records[-1]
        res.summary.append({"run": key, "status": rep.status, "final_rank": last["rank"],
                            "final_error": last["eps_tot"] if rep.converged else None})
    return res
