"""Local-error study of the retractions on a random rank-10 point.

A unit-norm rank-``r`` state and a unit-norm rank-``r_dir`` direction are
drawn from uniform factors; for every step in the grid the projection-
retraction error against the dense truncated SVD is recorded. In the reports
the ``t`` column carries the step size.
"""

from dataclasses import dataclass

import numpy as np

from ..descent import DescentConfig, descend_fixed
from ..manifold import AffineTarget, ErrorReport, LowRankState, error_metrics, manifold_project
from ..matcore import Factored, orth
from ..retraction import RetractionConfig, retract
from .common import ExperimentResult, child_rng, fit_slope

DEFAULT_DT_GRID = tuple(np.logspace(-1, -3, 9))


@dataclass(frozen=True)
class RetractionProblem:
    m: int = 500
    n: int = 220
    rank: int = 10
    direction_rank: int = 100

    def draw(self, seed):
        """Return ``(state, direction)`` with ``||state|| = ||direction|| = 1``."""
        rng = child_rng(seed, "retraction-problem")
        u = orth(rng.random((self.m, self.rank))).q
        v = orth(rng.random((self.n, self.rank))).q
        s = rng.random((self.rank, self.rank))
        s /= np.linalg.norm(s)
        a = rng.random((self.m, self.direction_rank))
        b = rng.random((self.n, self.direction_rank))
        scale = np.linalg.norm(a @ b.T)
        return LowRankState(u, v @ s.T), Factored(a / scale, b)


def _variants(descent_iters):
    out = [(f"order{k}", RetractionConfig(order=k), 1) for k in (1, 2, 3, 4)]
    out.append(("span_only", RetractionConfig(robust_mode="span_only"), 1))
    out.append(("adaptive", RetractionConfig(adaptive=True), 1))
    for j in descent_iters:
        out.append((f"descent{j}", RetractionConfig(order=1), j))
    return out


def run_retraction_convergence(seed=0, dims=(500, 220), ranks=(10, 100), dt_grid=DEFAULT_DT_GRID,
                               descent_iters=(2, 3), on_manifold=False):
    """Sweep the step size for orders 1-4, span-only, adaptive and descent variants.

    With ``on_manifold`` the direction is replaced by one whose target is
    exactly rank ``r`` (the truncated SVD of the original target), which is the
    setting where descent converges geometrically.
    """
    grid = [float(d) for d in dt_grid]
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("dt_grid must be strictly decreasing")
    prob = RetractionProblem(dims[0], dims[1], ranks[0], ranks[1])
    x, direction = prob.draw(seed)
    res = ExperimentResult("retraction-convergence", meta={"seed": seed, "dims": dims, "ranks": ranks})
    for key, cfg, iters in _variants(descent_iters):
        rep = ErrorReport(meta={"variant": key})
        for dt in grid:
            d = direction
            if on_manifold:
                best = manifold_project(x.reconstruct() + dt * direction.toarray(), x.rank)
                d = (best.reconstruct() - x.reconstruct()) / dt
            target = AffineTarget(x, d, dt)
            if iters == 1:
                out = retract(x, target, cfg)
            else:
                out = descend_fixed(x, target, DescentConfig(n_iters=iters, base=cfg))
            rep.add(dt, out.rank, **error_metrics(out, target))
        res.reports[key] = rep
        slope = fit_slope(grid, rep.column("eps_pr"), floor=1e-13)
        res.summary.append({"variant": key, "slope": slope, "eps_pr_min_dt": rep.records[-1]["eps_pr"]})
    return res
