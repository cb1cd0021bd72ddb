"""Angular rank augmentation, eigenvalue-based rank reduction, rank discovery."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .descent import DescentConfig, descend_auto, descend_fixed
from .manifold import AffineTarget, LowRankState, perp, tangent_project
from .matcore import Factored, LowRankError, dense, fro_norm, rand_range, sym_eig_asc, tmul


class ZeroDirection(RuntimeWarning):
    pass


class MaxOuterIterations(LowRankError):
    pass


@dataclass(frozen=True)
class RankPolicy:
    """Thresholds for rank adaptation.

    theta_star : departure angle (radians) above which the rank grows; 0 means
        always grow.
    sigma_star : relative Frobenius energy that may be truncated after a step.
    """

    theta_star: float = 0.1
    sigma_star: float = 0.0
    r_inc: int = 1
    r_max: int = 20
    seed: int = 0
    oversample: int = 5
    min_dwell: int = 0

    def __post_init__(self):
        if not 0 <= self.theta_star <= math.pi / 2:
            raise ValueError("theta_star must lie in [0, pi/2]")
        if not 0 <= self.sigma_star <= 1:
            raise ValueError("sigma_star must lie in [0, 1]")
        if self.r_inc < 1 or self.r_max < 1 or self.r_inc > self.r_max:
            raise ValueError("need 1 <= r_inc <= r_max")


@dataclass(frozen=True)
class AugmentedState:
    """Rank-augmented point ``[U Q] [Z_hat]^T`` plus bookkeeping.

    ``state`` already carries the pre-updated coefficients, ``q`` is the new
    block of modes and ``shift = U_hat Z_hat^T - U Z^T`` is the amount the
    pre-update moved the point (so targets stay put).
    """

    state: LowRankState
    q: np.ndarray
    shift: Factored
    augmented: bool

    @property
    def u_hat(self):
        return self.state.u

    @property
    def z_hat(self):
        return self.state.z

    def adjusted_direction(self, direction, dt):
        """``L' = L - shift / dt``."""
        return direction - self.shift * (1.0 / dt)


def departure_angle(x, direction):
    """Angle between ``direction`` and its tangent-space projection at ``x``."""
    nrm = fro_norm(direction)
    if nrm == 0:
        warnings.warn("zero direction; angle defined as 0", ZeroDirection, stacklevel=2)
        return 0.0
    # the tangent projection is orthogonal, so this is cheap and exact
    proj = tangent_project(x, direction)
    ratio = min(1.0, np.linalg.norm(proj) / nrm)
    return float(np.arccos(ratio))


def should_augment(theta, rank, policy):
    return (policy.theta_star == 0 or theta > policy.theta_star) and rank < policy.r_max


def augment(x, direction, dt, policy, seed=None, force=False, theta=None):
    """Grow ``x`` by up to ``r_inc`` modes along the unresolved part of ``direction``.

    The extra modes come from a randomized range finder applied to
    ``(I - UU^T) L``; the coefficients are pre-updated by ``dt L^T U_hat`` so the
    new modes carry energy before the retraction runs.
    """
    r = x.rank
    if theta is None:
        theta = departure_angle(x, direction)
    if not (force or should_augment(theta, r, policy)):
        empty = Factored(np.zeros((x.shape[0], 0)), np.zeros((x.shape[1], 0)))
        return AugmentedState(x, np.zeros((x.shape[0], 0)), empty, False)
    m, n = x.shape
    r_inc = min(r, policy.r_inc, policy.r_max - r, min(m, n) - r)
    if r_inc <= 0:
        empty = Factored(np.zeros((m, 0)), np.zeros((n, 0)))
        return AugmentedState(x, np.zeros((m, 0)), empty, False)
    if isinstance(direction, Factored):
        resid = Factored(perp(x.u, direction.a), direction.b)
    else:
        resid = perp(x.u, dense(direction))
    q = rand_range(resid, r_inc, policy.oversample, policy.seed if seed is None else seed)
    # one Gram-Schmidt pass against U, then re-orthonormalize
    q = perp(x.u, q)
    q, _ = np.linalg.qr(q)
    u_hat = np.hstack([x.u, q])
    dz = dt * tmul(direction, u_hat)
    z_hat = np.hstack([x.z, np.zeros((n, r_inc))]) + dz
    return AugmentedState(LowRankState(u_hat, z_hat), q, Factored(u_hat, dz), True)


def reduce_rank(x, policy):
    """Drop the weakest directions while the discarded energy stays below ``sigma_star``.

    Eigen-decomposes ``Z^T Z`` (ascending) and removes the longest prefix whose
    relative cumulative energy ``sqrt(sum(lambda_prefix) / sum(lambda))`` is
    below ``sigma_star``. At least one direction is always kept.
    """
    if policy.sigma_star <= 0 or x.rank <= 1:
        return x
    vals, vecs = sym_eig_asc(x.z.T @ x.z)
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    if total <= 0:
        return LowRankState(x.u[:, -1:], x.z[:, -1:])
    frac = np.sqrt(np.cumsum(vals) / total)
    below = np.nonzero(frac < policy.sigma_star)[0]
    cutoff = 0 if below.size == 0 else int(below[-1]) + 1
    cutoff = min(cutoff, x.rank - 1)
    if cutoff == 0:
        return x
    keep = vecs[:, cutoff:]
    return LowRankState(x.u @ keep, x.z @ keep)


def rank_adaptive_retract(x, direction, dt, policy, base=DescentConfig(), auto=False, seed=None):
    """Angle test, optional augmentation, robust retraction/descent, reduction.

    ``base.base`` must be a robust retraction (span-only or pseudo-inverse)
    because freshly added modes carry O(dt) singular values. With ``auto`` the
    automatic descent (``n_max``/``delta_star``) is used, otherwise
    ``n_iters`` fixed iterations.
    """
    if base.base.robust_mode == "none":
        raise ValueError("rank-adaptive retraction needs a robust base retraction")
    aug = augment(x, direction, dt, policy, seed=seed)
    start = aug.state
    if aug.augmented:
        direction = aug.adjusted_direction(direction, dt)
    target = AffineTarget(start, direction, dt)
    if auto:
        out, _ = descend_auto(start, target, base)
    else:
        out = descend_fixed(start, target, base)
    return reduce_rank(out, policy)


@dataclass
class DiscoveryTrace:
    """Per-outer-iteration diagnostics of :func:`discover_rank`."""

    rank: list = field(default_factory=list)
    rank_augmented: list = field(default_factory=list)
    eps_l: list = field(default_factory=list)
    inner: list = field(default_factory=list)


def discover_rank(
    x, direction, dt, policy, eps_l_star=1e-6, n_max=16, max_outer=64, trace=None, metrics=None
):
    """Grow, descend and compress until ``||X_i + dt L - X|| / ||X_i|| <= eps_l_star``.

    ``direction`` must be factored. Each outer pass calls the rank-adaptive
    retraction with ``theta_star = 0`` (always grow while below ``r_max``),
    ``sigma_star = eps_l_star`` and automatic descent with
    ``delta_star = eps_l_star``. ``metrics(state, target)`` may return a dict
    that is appended to ``trace`` per inner iteration.
    """
    if not isinstance(direction, Factored):
        raise TypeError("discover_rank expects a factored direction")
    pol = RankPolicy(
        theta_star=0.0,
        sigma_star=eps_l_star,
        r_inc=policy.r_inc,
        r_max=policy.r_max,
        seed=policy.seed,
        oversample=policy.oversample,
    )
    base = DescentConfig(n_max=n_max, delta_star=eps_l_star)
    goal = AffineTarget(x, direction, dt)
    alpha = x.norm() or 1.0
    it = x
    outer = 0
    while fro_norm(goal.displacement_from(it)) / alpha > eps_l_star:
        if outer >= max_outer:
            raise MaxOuterIterations(f"no convergence after {max_outer} outer iterations")
        # remaining direction seen from the current iterate, still factored
        resid = goal.displacement_from(it) * (1.0 / dt)
        aug = augment(it, resid, dt, pol, seed=pol.seed + outer)
        start = aug.state
        d = aug.adjusted_direction(resid, dt) if aug.augmented else resid
        sub = AffineTarget(start, d, dt)
        seen = []

        def cb(j, state):
            if metrics is not None:
                seen.append(metrics(state, goal))

        out, used = descend_auto(start, sub, base, callback=cb)
        it = reduce_rank(out, pol)
        outer += 1
        if trace is not None:
            trace.rank_augmented.append(start.rank)
            trace.rank.append(it.rank)
            trace.eps_l.append(fro_norm(goal.displacement_from(it)) / alpha)
            trace.inner.append(seen)
    return it
