"""Dynamical low-rank approximation with perturbative, descent and rank-adaptive retractions."""

from .descent import DescentConfig, descend_auto, descend_fixed, state_distance
from .dork import (
    DirectionSeries,
    IntegratorSpec,
    RhsOracle,
    build_series,
    integrate,
    step_full_rank,
    step_gd_dork,
    step_projected_rk,
    step_projector_splitting,
    step_so_dork,
)
from .manifold import (
    AffineTarget,
    ErrorReport,
    LowRankState,
    error_metrics,
    manifold_project,
    tangent_project,
)
from .matcore import (
    Factored,
    IllConditioned,
    LowRankError,
    RankDeficient,
    ZeroMatrix,
    orth,
    pseudo_solve,
    rand_range,
    svd_trunc,
)
from .rank_adapt import (
    DiscoveryTrace,
    MaxOuterIterations,
    RankPolicy,
    augment,
    departure_angle,
    discover_rank,
    rank_adaptive_retract,
    reduce_rank,
)
from .retraction import RetractionConfig, optimal_retract, retract, robust_retract_first_order

__version__ = "0.1.0"

__all__ = [
    "AffineTarget",
    "DescentConfig",
    "DirectionSeries",
    "DiscoveryTrace",
    "ErrorReport",
    "Factored",
    "IllConditioned",
    "IntegratorSpec",
    "LowRankError",
    "LowRankState",
    "MaxOuterIterations",
    "RankDeficient",
    "RankPolicy",
    "RetractionConfig",
    "RhsOracle",
    "ZeroMatrix",
    "augment",
    "build_series",
    "departure_angle",
    "descend_auto",
    "descend_fixed",
    "discover_rank",
    "error_metrics",
    "integrate",
    "manifold_project",
    "optimal_retract",
    "orth",
    "pseudo_solve",
    "rand_range",
    "rank_adaptive_retract",
    "reduce_rank",
    "retract",
    "robust_retract_first_order",
    "state_distance",
    "step_full_rank",
    "step_gd_dork",
    "step_projected_rk",
    "step_projector_splitting",
    "step_so_dork",
    "svd_trunc",
    "tangent_project",
]
