"""Gradient-descent retractions: repeat a base retraction on the residual.

Each iteration retracts from the current iterate ``X`` toward the fixed
target ``chi = X_i + dt * L``, i.e. along ``chi - X``. The fixed point is the
truncated SVD of ``chi``.
"""

from dataclasses import dataclass, field

import numpy as np

from .matcore import Factored, fro_norm
from .retraction import RetractionConfig, retract


def state_distance(a, b):
    """Frobenius distance between two low-rank states."""
    return fro_norm(Factored(np.hstack([a.u, -b.u]), np.hstack([a.z, b.z])))


@dataclass(frozen=True)
class DescentConfig:
    """Iteration control for the descent retractions.

    Set ``n_iters`` for the fixed variant, or ``n_max`` and ``delta_star`` for
    the automatic one. ``interpret_tolerance_as_stop`` (default) stops once the
    relative change drops below ``delta_star``; turning it off reproduces the
    published loop guard literally (iterate while the change is *below*
    ``delta_star``).
    """

    n_iters: int = 1
    n_max: int = 16
    delta_star: float = 1e-12
    base: RetractionConfig = field(default_factory=lambda: RetractionConfig(robust_mode="span_only"))
    interpret_tolerance_as_stop: bool = True
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.n_iters < 1 or self.n_max < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.delta_star > 0:
            raise ValueError("delta_star must be positive")


def descend_fixed(x, target, cfg=DescentConfig(), callback=None):
    """Apply the base retraction ``cfg.n_iters`` times toward ``target``."""
    it = x
    for j in range(cfg.n_iters):
        it = retract(it, target, cfg.base)
        if callback is not None:
            callback(j + 1, it)
    return it


def descend_auto(x, target, cfg=DescentConfig(), callback=None):
    """Iterate until the relative change falls below ``delta_star`` or ``n_max``.

    Returns ``(state, iterations_used)``. If the change grows by more than
    ``divergence_factor`` between iterations, the previous iterate is returned.
    """
    alpha = x.norm() or 1.0
    it = retract(x, target, cfg.base)
    if callback is not None:
        callback(1, it)
    delta = state_distance(it, x)
    j = 1

    def keep_going(d):
        if cfg.interpret_tolerance_as_stop:
            return d / alpha >= cfg.delta_star
        return d / alpha < cfg.delta_star

    while j < cfg.n_max and keep_going(delta):
        j += 1
        prev = it
        it = retract(prev, target, cfg.base)
        if callback is not None:
            callback(j, it)
        new_delta = state_distance(it, prev)
        if new_delta > cfg.divergence_factor * delta and delta > 0:
            return prev, j - 1
        delta = new_delta
    return it, j
