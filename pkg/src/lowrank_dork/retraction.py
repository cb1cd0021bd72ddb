"""Optimal perturbative retractions onto the fixed-rank manifold.

A retraction maps a state ``X = U Z^T`` and a target ``chi = X + D`` back to
rank r. The mode update is a perturbation series ``U + c_1 + ... + c_k``
(``c_j`` of size ``O(dt^j)``) which is re-orthonormalized; the coefficients are
then the exact least-squares fit ``Z_new = chi^T U_new``. Because of that last
step ``||X_new|| <= ||chi||`` for every variant here.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .manifold import LowRankState, perp
from .matcore import IllConditioned, Factored, orth, pseudo_solve, tmul

ROBUST_MODES = ("none", "pseudoinverse", "span_only")


class NeumannSeriesWarning(RuntimeWarning):
    """The step is too large for the series behind the corrections to converge."""


@dataclass(frozen=True)
class RetractionConfig:
    order: int = 1
    adaptive: bool = False
    eps_adapt: float = 0.1
    robust_mode: str = "none"
    rel_cut: float = 1e-9
    orthonormalize_each_step: bool = True
    cond_max: float = 1e14

    def __post_init__(self):
        if self.order not in (1, 2, 3, 4):
            raise ValueError(f"order must be 1..4, got {self.order}")
        if self.robust_mode not in ROBUST_MODES:
            raise ValueError(f"robust_mode must be one of {ROBUST_MODES}")
        if not 0 < self.rel_cut < 1:
            raise ValueError("rel_cut must lie in (0, 1)")
        if self.eps_adapt <= 0:
            raise ValueError("eps_adapt must be positive")

    @property
    def effective_order(self):
        return 1 if self.robust_mode == "span_only" else self.order


def _gram_solver(z, cfg):
    """Return ``f(M) = M (Z^T Z)^{-1}`` honoring the robust mode."""
    g = z.T @ z
    if cfg.robust_mode == "pseudoinverse":
        return lambda m: pseudo_solve(g, m.T, cfg.rel_cut).T
    if g.size:
        cond = np.linalg.cond(g)
        if not np.isfinite(cond) or cond > cfg.cond_max:
            raise IllConditioned(f"cond(Z^T Z) = {cond:.3e} exceeds {cfg.cond_max:.1e}")
    cho = la.cho_factor(g)
    return lambda m: la.cho_solve(cho, m.T).T


class _Series:
    """Displacement increments ``D_1..D_k`` with their cached thin products.

    ``D_j`` is the O(dt^j) part of the displacement (dt powers included), so the
    j-th correction computed from it is already scaled by ``dt^j``.
    """

    def __init__(self, u, z, ds):
        self.u, self.z = u, z
        self.ds = list(ds) + [None] * (4 - len(ds))
        self._t = {}
        self.dz = [None if d is None else d @ z for d in self.ds]

    def has(self, j):
        return self.ds[j - 1] is not None

    def dzj(self, j):
        return self.dz[j - 1]

    def tr(self, j, key, w):
        # D_j^T w, cached by (j, key)
        k = (j, key)
        if k not in self._t:
            self._t[k] = tmul(self.ds[j - 1], w)
        return self._t[k]

    def sym(self, j):
        if not self.has(j):
            return 0.0
        a = self.u.T @ self.dzj(j)
        return a + a.T


def _corrections(series, solve, order, stop=None):
    """Mode corrections c_1..c_order for increments D_1..D_4.

    ``stop(j, c_j)`` may veto a correction; the series is then cut before it.
    """
    s = series
    u, z = s.u, s.z
    g = z.T @ z
    m, r = u.shape
    zero = np.zeros((m, r))

    def dd(j, k, w, key):
        # D_j D_k^T w
        if not (s.has(j) and s.has(k)):
            return zero
        return s.ds[j - 1] @ s.tr(k, key, w)

    def dz(j):
        return s.dzj(j) if s.has(j) else zero

    out = []
    c1 = solve(perp(u, dz(1)))
    out.append(c1)
    if order == 1:
        return out
    s1 = s.sym(1)
    c2 = solve(perp(u, dd(1, 1, u, "u") + dz(2)) - c1 @ s1)
    if stop is not None and stop(2, c2):
        return out
    out.append(c2)
    if order == 2:
        return out

    t1u = s.tr(1, "u", u) if s.has(1) else None
    c1dz1 = c1.T @ dz(1)
    b1 = c1dz1 + c1dz1.T - (c1.T @ c1) @ g
    if t1u is not None:
        b1 = b1 + t1u.T @ t1u
    s2 = s.sym(2)
    head = dd(1, 1, c1, "c1") + dd(1, 2, u, "u") + dd(2, 1, u, "u") + dz(3)
    c3 = solve(perp(u, head) - c2 @ s1 - c1 @ (s2 + b1))
    if stop is not None and stop(3, c3):
        return out
    out.append(c3)
    if order == 3:
        return out

    s3 = s.sym(3)
    c1dz2 = c1.T @ dz(2)
    c2dz1 = c2.T @ dz(1)
    c1c1 = c1.T @ c1
    c1c2 = c1.T @ c2
    a1 = u.T @ dz(1)
    b2 = (
        s3
        + c1dz2 + c1dz2.T
        + c2dz1 + c2dz1.T
        - c1c2 @ g - c1c2.T @ g
        - c1c1 @ a1 - c1c1 @ a1.T
    )
    if s.has(1) and s.has(2):
        t2u = s.tr(2, "u", u)
        b2 = b2 + t2u.T @ t1u + t1u.T @ t2u
    if s.has(1):
        x = t1u.T @ s.tr(1, "c1", c1)
        b2 = b2 + x + x.T
    head = (
        dd(1, 1, c2, "c2")
        + dd(1, 2, c1, "c1") + dd(2, 1, c1, "c1")
        + dd(1, 3, u, "u") + dd(3, 1, u, "u") + dd(2, 2, u, "u")
        + dz(4)
    )
    c4 = solve(perp(u, head) - c3 @ s1 - c2 @ (s2 + b1) - c1 @ b2)
    if stop is not None and stop(4, c4):
        return out
    out.append(c4)
    return out


def _finish(x, total, corrections, cfg):
    u, z = x.u, x.z
    du = corrections[0]
    for c in corrections[1:]:
        du = du + c
    if not cfg.orthonormalize_each_step and not np.any(du):
        return LowRankState(u, z + tmul(total, u))
    gram = du.T @ du
    if gram.size and np.linalg.norm(gram, 2) >= 1.0:
        warnings.warn(
            "mode update norm >= 1; reduce dt or use a robust mode",
            NeumannSeriesWarning,
            stacklevel=3,
        )
    u_new = orth(u + du).q
    z_new = z @ (u.T @ u_new) + tmul(total, u_new)
    return LowRankState(u_new, z_new)


def series_retract(x, increments, cfg, total=None, adaptive=False):
    """Perturbative update of ``x`` toward ``x + sum(increments)``.

    ``increments[j-1]`` holds the O(dt^j) part of the displacement (None for an
    absent term). With a single increment this is the optimal perturbative
    retraction of order ``cfg.order``.
    """
    if total is None:
        parts = [d for d in increments if d is not None]
        total = parts[0]
        for d in parts[1:]:
            total = total + d
    solve = _gram_solver(x.z, cfg)
    series = _Series(x.u, x.z, increments)
    stop = None
    if adaptive:
        scale = math.sqrt(max(x.rank, 1))

        def stop(j, c):
            return np.linalg.norm(c) / scale >= cfg.eps_adapt

    order = 4 if adaptive else cfg.order
    corr = _corrections(series, solve, order, stop)
    return _finish(x, total, corr, cfg)


def optimal_retract(x, target, cfg=RetractionConfig()):
    """Optimal perturbative retraction of order ``cfg.order`` (1..4)."""
    d = target.displacement_from(x)
    return series_retract(x, [d], cfg, total=d)


def adaptive_order_retract(x, target, cfg=RetractionConfig(adaptive=True)):
    """Order-1..4 retraction that drops corrections once they grow past ``eps_adapt``.

    Each candidate correction ``c_j`` (j >= 2) is measured as
    ``||c_j|| / sqrt(r)``; the first one at or above the threshold and all
    later ones are discarded.
    """
    d = target.displacement_from(x)
    return series_retract(x, [d], cfg, total=d, adaptive=True)


def robust_first_order_update(x, d):
    """Span-only first-order step from ``x`` with displacement ``d``.

    The new modes span ``U (Z^T Z) + (I - UU^T) D Z``. With ``Z = V S W^T``
    that span equals the one of ``U W S + (I - UU^T) D V`` (right-multiply by
    ``W S^{-1}``), which is what gets orthonormalized: it squares no singular
    values, so directions near machine precision relative to ``||X||`` are
    not lost in the QR, and a zero singular value contributes the unresolved
    direction ``(I - UU^T) D v`` instead of an arbitrary completion. Nothing
    is inverted.
    """
    u, z = x.u, x.z
    v, sig, wt = np.linalg.svd(z, full_matrices=False)
    arg = (u @ wt.T) * sig + perp(u, d @ v)
    u_new = orth(arg, check=False).q
    z_new = z @ (u.T @ u_new) + tmul(d, u_new)
    return LowRankState(u_new, z_new)


def robust_retract_first_order(x, target):
    """Robust first-order retraction, valid for singular ``Z^T Z``.

    Only the span of the modes is tracked, so individual modes are not
    continuous in time.
    """
    return robust_first_order_update(x, target.displacement_from(x))


def retract(x, target, cfg=RetractionConfig()):
    """Dispatch on ``cfg``: span-only, adaptive-order or fixed-order retraction."""
    if cfg.robust_mode == "span_only":
        return robust_retract_first_order(x, target)
    if cfg.adaptive:
        return adaptive_order_retract(x, target, cfg)
    return optimal_retract(x, target, cfg)


def correction_stack(x, target, cfg=RetractionConfig()):
    """The individual corrections ``c_j`` (diagnostics and tests)."""
    d = target.displacement_from(x)
    solve = _gram_solver(x.z, cfg)
    return _corrections(_Series(x.u, x.z, [d]), solve, cfg.order)


__all__ = [
    "Factored",
    "NeumannSeriesWarning",
    "RetractionConfig",
    "adaptive_order_retract",
    "correction_stack",
    "optimal_retract",
    "retract",
    "robust_first_order_update",
    "robust_retract_first_order",
    "series_retract",
]
