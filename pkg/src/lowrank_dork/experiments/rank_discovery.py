"""Recover the rank of ``X + dt L`` from a low-rank start by grow/descend/compress."""

import numpy as np

from ..manifold import ErrorReport, LowRankState
from ..matcore import Factored, fro_norm, orth
from ..rank_adapt import DiscoveryTrace, RankPolicy, discover_rank
from .common import ExperimentResult, child_rng


def draw_instance(seed, m=500, n=220, rank=20, direction_rank=105):
    """Unit-norm rank-``rank`` state and unit-norm rank-``direction_rank`` direction.

    The target ``X + dt L`` then has rank ``rank + direction_rank``.
    """
    rng = child_rng(seed, "rank-discovery-problem")
    u = orth(rng.random((m, rank))).q
    v = orth(rng.random((n, rank))).q
    s = rng.random((rank, rank))
    s /= np.linalg.norm(s)
    a = rng.random((m, direction_rank))
    b = rng.random((n, direction_rank))
    scale = np.linalg.norm(a @ b.T)
    return LowRankState(u, v @ s.T), Factored(a / scale, b)


def run_rank_discovery(seed=0, dims=(500, 220), rank=20, direction_rank=105, dt=0.1, r_inc=25, r_max=200,
                       eps_l_star=1e-6, n_max=16, max_outer=64):
    """One report row per descent iteration; ``t`` counts outer passes.

    ``eps_N`` is the distance from the target to the best approximation at
    the current (pre-truncation) rank, which can only shrink as modes are
    added.
    """
    x, direction = draw_instance(seed, dims[0], dims[1], rank, direction_rank)
    chi = x.reconstruct() + dt * direction.toarray()
    alpha = x.norm()
    sv = np.linalg.svd(chi, compute_uv=False)
    tail = np.sqrt(np.cumsum((sv**2)[::-1]))[::-1]

    def eps_n(k):
        return float(tail[k] / alpha) if k < len(tail) else 0.0

    def metrics(state, goal):
        return {"eps_l": fro_norm(goal.displacement_from(state)) / alpha, "eps_N": eps_n(state.rank)}

    trace = DiscoveryTrace()
    pol = RankPolicy(r_inc=r_inc, r_max=r_max, seed=seed)
    out = discover_rank(x, direction, dt, pol, eps_l_star, n_max, max_outer, trace=trace, metrics=metrics)
    rep = ErrorReport(meta={"seed": seed})
    rep.add(0, x.rank, eps_l=fro_norm(dt * direction) / alpha, eps_N=eps_n(x.rank))
    for i, inner in enumerate(trace.inner, start=1):
        for row in inner:
            rep.add(i, trace.rank_augmented[i - 1], **row)
        rep.add(i, trace.rank[i - 1], eps_l=trace.eps_l[i - 1], eps_N=eps_n(trace.rank[i - 1]))
    res = ExperimentResult("rank-discovery", reports={"discovery": rep},
                           meta={"seed": seed, "true_rank": rank + direction_rank, "state": out})
    for i, (ra, rr, el) in enumerate(zip(trace.rank_augmented, trace.rank, trace.eps_l), start=1):
        res.summary.append({"outer": i, "rank_augmented": ra, "rank": rr, "eps_l": el,
                            "eps_N": eps_n(ra), "truncated": rr < ra})
    return res
