"""Time integrators on the fixed-rank manifold.

so-DORK feeds the Runge-Kutta increments of the integrated operator into the
perturbative retraction, gd-DORK applies descent steps toward successively
higher-order targets. Projected Runge-Kutta and the symmetric projector-
splitting integrator are included as baselines, plus a dense Runge-Kutta
reference.

Right-hand sides are evaluated on dense arrays or :class:`Factored` pairs and
may return either. Stage states are kept on the manifold with the span-only
first-order retraction.
"""

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .descent import DescentConfig, descend_fixed
from .manifold import AffineTarget, ErrorReport, LowRankState, manifold_project, perp, tangent_project
from .matcore import Factored, LowRankError, dense, orth, tmul
from .rank_adapt import RankPolicy, augment, reduce_rank
from .retraction import ROBUST_MODES, RetractionConfig, robust_first_order_update, series_retract

SCHEMES = ("so_dork", "gd_dork", "projector_splitting", "projected_rk", "full_rank")


@dataclass(frozen=True)
class RhsOracle:
    """Wraps ``fn(x, t)`` where ``x`` is an ndarray or a :class:`Factored` pair.

    ``linear`` and ``columnwise`` are descriptive flags for callers; the
    integrators do not branch on them.
    """

    fn: Callable
    linear: bool = False
    columnwise: bool = False

    def __call__(self, x, t):
        if isinstance(x, LowRankState):
            x = x.as_factored()
        return self.fn(x, t)


@dataclass(frozen=True)
class DirectionSeries:
    """Partial sums ``L^(1..k)`` of the integrated operator for one step.

    ``L^(j)`` is a j-th order Runge-Kutta average; consecutive differences are
    the increments consumed by so-DORK.
    """

    dt: float
    partials: tuple
    first_stage: object = field(default=None, compare=False)

    @property
    def order(self):
        return len(self.partials)

    def increment(self, j):
        """``(L^(j) - L^(j-1)) / dt`` with ``L^(0) = 0`` scaled so ``L^(1)`` is returned for j = 1."""
        if j == 1:
            return self.partials[0]
        return (self.partials[j - 1] - self.partials[j - 2]) * (1.0 / self.dt)

    def displacements(self):
        """``[dt L^(1), dt (L^(2) - L^(1)), ...]``: the j-th entry is O(dt^j)."""
        out = [self.partials[0] * self.dt]
        for j in range(1, self.order):
            out.append((self.partials[j] - self.partials[j - 1]) * self.dt)
        return out


def default_stage_iters(scheme, order):
    """Descent iterations used to place each stage point on the manifold.

    One span-only step is only first-order accurate, which caps RK3/RK4 at
    second order, so those use two. so-DORK always uses two because its
    higher corrections amplify stage errors on ill-conditioned states.
    gd-DORK at order <= 2 keeps one: its Heun stage is then the first
    descent iterate itself.
    """
    if scheme == "gd_dork" and order <= 2:
        return 1
    return 2


def _stage(x, k, h, iters):
    # keep the stage point on the manifold
    return descend_fixed(x, AffineTarget(x, k, h), DescentConfig(n_iters=iters))


def build_series(rhs, x, t, dt, order, stage_iters=2):
    """Euler, Heun, Kutta-3 and RK4 averages of ``rhs`` around ``x``.

    Stage evaluations reuse earlier ones where the tableaux share them, so
    order 4 costs six right-hand-side calls.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError(f"order must be 1..4, got {order}")
    k1 = rhs(x, t)
    parts = [k1]
    first = None
    if order >= 2:
        first = _stage(x, k1, dt, stage_iters)
        k2 = rhs(first, t + dt)
        parts.append((k1 + k2) * 0.5)
    if order >= 3:
        ka = rhs(_stage(x, k1, 0.5 * dt, stage_iters), t + 0.5 * dt)
        kb = rhs(_stage(x, ka * 2.0 - k1, dt, stage_iters), t + dt)
        parts.append((k1 + ka * 4.0 + kb) * (1.0 / 6.0))
    if order == 4:
        kc = rhs(_stage(x, ka, 0.5 * dt, stage_iters), t + 0.5 * dt)
        kd = rhs(_stage(x, kc, dt, stage_iters), t + dt)
        parts.append((k1 + ka * 2.0 + kc * 2.0 + kd) * (1.0 / 6.0))
    return DirectionSeries(dt, tuple(parts), first)


def _perp_any(u, d):
    if isinstance(d, Factored):
        return Factored(perp(u, d.a), d.b)
    return perp(u, dense(d))


def step_so_dork(x, rhs, t, dt, order=2, robust_mode="pseudoinverse", rel_cut=1e-9,
                 stage_iters=None, policy=None):
    """One so-DORK step of the given order.

    With a rank ``policy`` the state is augmented along the full-order
    direction first, every increment is projected off the augmented modes,
    and the result is truncated afterwards.
    """
    cfg = RetractionConfig(order=order, robust_mode=robust_mode, rel_cut=rel_cut)
    if policy is not None and robust_mode == "none":
        raise ValueError("rank adaptation needs a robust retraction")
    if stage_iters is None:
        stage_iters = default_stage_iters("so_dork", order)
    series = build_series(rhs, x, t, dt, order, stage_iters)
    ds = series.displacements()
    total = series.partials[-1] * dt
    if policy is not None:
        aug = augment(x, series.partials[-1], dt, policy)
        if aug.augmented:
            x = aug.state
            ds = [_perp_any(x.u, d) for d in ds]
            total = _perp_any(x.u, total)
    if robust_mode == "span_only":
        # span-only has no higher corrections; retract on the full displacement
        out = robust_first_order_update(x, total)
    else:
        out = series_retract(x, ds, cfg, total=total)
    return out if policy is None else reduce_rank(out, policy)


def step_gd_dork(x, rhs, t, dt, order=2, base=DescentConfig(), stage_iters=None, policy=None):
    """One gd-DORK step.

    Orders 1 and 2 descend toward the Euler and then the Heun target; orders
    3 and 4 iterate ``order`` times on the precomputed highest-order target.
    """
    if policy is not None and base.base.robust_mode == "none":
        raise ValueError("rank adaptation needs a robust retraction")
    if stage_iters is None:
        stage_iters = default_stage_iters("gd_dork", order)
    series = build_series(rhs, x, t, dt, order, stage_iters)
    if order <= 2:
        dirs = list(series.partials)
    else:
        dirs = [series.partials[-1]] * order
    start = x
    if policy is not None:
        aug = augment(x, series.partials[-1], dt, policy)
        if aug.augmented:
            start = aug.state
            dirs = [aug.adjusted_direction(d, dt) for d in dirs]
    it = start
    for d in dirs:
        it = descend_fixed(it, AffineTarget(start, d, dt), base)
    return it if policy is None else reduce_rank(it, policy)


def step_projected_rk(x, rhs, t, dt):
    """Heun's method with tangent projection of each stage and truncation after each combination."""
    r = x.rank
    xd = x.reconstruct()
    k1 = tangent_project(x, rhs(x, t))
    y = manifold_project(xd + dt * k1, r)
    k2 = tangent_project(y, rhs(y, t + dt))
    return manifold_project(xd + 0.5 * dt * (k1 + k2), r)


def _heun(f, y0, t0, h):
    k1 = f(y0, t0)
    k2 = f(y0 + h * k1, t0 + h)
    return y0 + 0.5 * h * (k1 + k2)


def _qr(a):
    res = orth(a, check=False)
    return res.q, res.r


def step_projector_splitting(x, rhs, t, dt):
    """Symmetric (Strang) K-S-L-S-K projector-splitting step, Heun on each substep."""
    u0 = x.u
    v0, rz = _qr(x.z)
    s0 = rz.T
    h = 0.5 * dt

    def k_rhs(v):
        return lambda k, tt: rhs(Factored(k, v), tt) @ v

    def s_rhs(u, v):
        return lambda s, tt: -(u.T @ (rhs(Factored(u @ s, v), tt) @ v))

    k = _heun(k_rhs(v0), u0 @ s0, t, h)
    u1, sh = _qr(k)
    s = _heun(s_rhs(u1, v0), sh, t, h)
    l_ = _heun(lambda l, tt: tmul(rhs(Factored(u1, l), tt), u1), v0 @ s.T, t, dt)
    v2, lr = _qr(l_)
    s = _heun(s_rhs(u1, v2), lr.T, t + h, h)
    k = _heun(k_rhs(v2), u1 @ s, t + h, h)
    u2, s2 = _qr(k)
    return LowRankState(u2, v2 @ s2.T)


_RK_TABLEAUX = {
    1: ([], [1.0], []),
    2: ([[1.0]], [0.5, 0.5], [1.0]),
    3: ([[0.5], [-1.0, 2.0]], [1 / 6, 2 / 3, 1 / 6], [0.5, 1.0]),
    4: ([[0.5], [0.0, 0.5], [0.0, 0.0, 1.0]], [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0.5, 0.5, 1.0]),
}


def step_full_rank(y, rhs, t, dt, order=4):
    """Explicit Runge-Kutta step (Euler, Heun, Kutta-3, RK4) on a dense array."""
    a, b, c = _RK_TABLEAUX[order]
    ks = [dense(rhs(y, t))]
    for i, row in enumerate(a):
        yi = y + dt * sum(w * k for w, k in zip(row, ks) if w)
        ks.append(dense(rhs(yi, t + c[i] * dt)))
    return y + dt * sum(w * k for w, k in zip(b, ks))


@dataclass(frozen=True)
class IntegratorSpec:
    """Scheme, order and step control for :func:`integrate`.

    ``t_span`` must be an integer multiple of ``dt``. ``descent`` configures
    the gd-DORK sub-retractions, ``robust_mode``/``rel_cut`` the so-DORK
    inverse. ``policy`` enables rank adaptation (DORK schemes only).
    """

    scheme: str
    dt: float
    t_span: tuple = (0.0, 1.0)
    order: int = 2
    robust_mode: str = "pseudoinverse"
    rel_cut: float = 1e-9
    descent: DescentConfig = field(default_factory=DescentConfig)
    stage_iters: int = None
    policy: RankPolicy = None
    blowup: float = 1e8

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        t0, t1 = self.t_span
        if t1 < t0:
            raise ValueError("t_span must be increasing")
        steps = (t1 - t0) / self.dt
        if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
            raise ValueError("t_span is not a multiple of dt")
        if self.scheme in ("projector_splitting", "projected_rk"):
            if self.order != 2:
                raise ValueError(f"{self.scheme} is implemented at order 2 only")
        elif self.order not in (1, 2, 3, 4):
            raise ValueError("order must be 1..4")
        if self.robust_mode not in ROBUST_MODES:
            raise ValueError(f"robust_mode must be one of {ROBUST_MODES}")
        if self.policy is not None and self.scheme not in ("so_dork", "gd_dork"):
            raise ValueError("rank adaptation is only available for the DORK schemes")
        if self.stage_iters is not None and self.stage_iters < 1:
            raise ValueError("stage_iters must be >= 1")

    @property
    def n_steps(self):
        t0, t1 = self.t_span
        return int(round((t1 - t0) / self.dt))


def make_stepper(spec, rhs):
    """Return ``step(x, t, policy) -> state`` for ``spec``."""
    s = spec
    if s.scheme == "so_dork":
        return lambda x, t, pol: step_so_dork(
            x, rhs, t, s.dt, s.order, s.robust_mode, s.rel_cut, s.stage_iters, pol
        )
    if s.scheme == "gd_dork":
        return lambda x, t, pol: step_gd_dork(x, rhs, t, s.dt, s.order, s.descent, s.stage_iters, pol)
    if s.scheme == "projected_rk":
        return lambda x, t, pol: step_projected_rk(x, rhs, t, s.dt)
    if s.scheme == "projector_splitting":
        return lambda x, t, pol: step_projector_splitting(x, rhs, t, s.dt)
    return lambda x, t, pol: step_full_rank(x, rhs, t, s.dt, s.order)


def _rank_of(x):
    return x.rank if isinstance(x, LowRankState) else min(np.shape(x))


def _norm_of(x):
    return x.norm() if isinstance(x, LowRankState) else float(np.linalg.norm(x))


def _finite(x):
    if isinstance(x, LowRankState):
        return bool(np.all(np.isfinite(x.u)) and np.all(np.isfinite(x.z)))
    return bool(np.all(np.isfinite(x)))


def integrate(spec, rhs, x0, observers=(), timing=False):
    """Fixed-step time loop producing an :class:`ErrorReport`.

    Each observer is called as ``obs(t, state)`` after every step (and once
    for the initial state) and may return a dict of metrics for the record.
    Numerical failures, non-finite states or norms beyond ``blowup`` times the
    initial norm stop the run with status ``"DNC"``. The last state reached is
    stored under ``report.meta["state"]``.
    """
    step = make_stepper(spec, rhs)
    t0 = spec.t_span[0]
    report = ErrorReport(meta={"scheme": spec.scheme, "order": spec.order, "dt": spec.dt})
    clock = time.perf_counter()

    def record(t, x):
        metrics = {}
        for obs in observers:
            out = obs(t, x)
            if out:
                metrics.update(out)
        wall = time.perf_counter() - clock if timing else None
        report.add(t, _rank_of(x), wall_s=wall, **metrics)

    x = x0
    limit = spec.blowup * max(_norm_of(x0), np.finfo(float).tiny)
    dwell = spec.policy.min_dwell if spec.policy is not None else 0
    since_change = dwell
    t = t0
    try:
        record(t, x)
        for i in range(spec.n_steps):
            pol = spec.policy if since_change >= dwell else None
            new = step(x, t, pol)
            if not _finite(new) or _norm_of(new) > limit:
                raise FloatingPointError(f"state blew up (norm {_norm_of(new):.3e})")
            since_change = 0 if _rank_of(new) != _rank_of(x) else since_change + 1
            x = new
            t = t0 + (i + 1) * spec.dt
            record(t, x)
    except (LowRankError, FloatingPointError, np.linalg.LinAlgError) as exc:
        report.status = "DNC"
        report.diagnostic = f"t={t:.6g}: {type(exc).__name__}: {exc}"
    report.meta["state"] = x
    return report
