"""Reproducible numerical experiments (desk-scale defaults, paper scale via arguments)."""

from .advdiff import AdvDiffProblem, CFLViolation, run_advdiff, table4
from .common import ExperimentResult, child_rng, fit_slope, format_table, parallel_map
from .fisher_kpp import FisherKppProblem, LeapfrogUnstable, run_fisher_kpp
from .oscillator import OscillatorProblem, run_oscillator, table3
from .rank_discovery import run_rank_discovery
from .retraction_convergence import RetractionProblem, run_retraction_convergence

__all__ = [
    "AdvDiffProblem",
    "CFLViolation",
    "ExperimentResult",
    "FisherKppProblem",
    "LeapfrogUnstable",
    "OscillatorProblem",
    "RetractionProblem",
    "child_rng",
    "fit_slope",
    "format_table",
    "parallel_map",
    "run_advdiff",
    "run_fisher_kpp",
    "run_oscillator",
    "run_rank_discovery",
    "run_retraction_convergence",
    "table3",
    "table4",
]
