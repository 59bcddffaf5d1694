"""K-sparse variable selection by exhaustive and replica-exchange search."""

from .criteria import (
    CriterionPair,
    NumericalError,
    PriorScaleError,
    PriorSpec,
    SingularSystemError,
    cross_validation_error,
    estimate_prior_scale,
    fit_wls,
    free_energy,
    make_folds,
)
from .data import Dataset, DataValidationError, SupportSet, load_dataset, standardize
from .evaluator import CriteriaConfig, SupportEvaluator

__version__ = "0.1.0"

__all__ = [
    "CriteriaConfig",
    "CriterionPair",
    "DataValidationError",
    "Dataset",
    "NumericalError",
    "PriorScaleError",
    "PriorSpec",
    "SingularSystemError",
    "SupportEvaluator",
    "SupportSet",
    "cross_validation_error",
    "estimate_prior_scale",
    "fit_wls",
    "free_energy",
    "load_dataset",
    "make_folds",
    "standardize",
]
