"""Adversarially resilient binary classifiers via a constrained pessimistic bilevel program."""

from .model import (
    AdversarySample,
    BilevelProblem,
    Dataset,
    HyperParams,
    ProblemValidationError,
    validate_problem,
)
from .lm import LMConfig, SolveReport, Termination, lm_solve
from .metrics import ConfusionCounts, confusion, p4
from .stationarity import StationarityPoint, StationaritySystem

__all__ = [
    "AdversarySample",
    "BilevelProblem",
    "ConfusionCounts",
    "Dataset",
    "HyperParams",
    "LMConfig",
    "ProblemValidationError",
    "SolveReport",
    "StationarityPoint",
    "StationaritySystem",
    "Termination",
    "confusion",
    "lm_solve",
    "p4",
    "validate_problem",
]

__version__ = "0.1.0"
