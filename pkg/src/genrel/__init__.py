"""Debiased inference for genetic covariance, variance and correlation of two binary traits."""

from .core import LinkKind, PairedStudy, Scenario, TargetFunctional, expit, validate_study
from .lasso import CrossValidate, FixedC, LassoFit, SolverOptions

__version__ = "0.1.0"

__all__ = ["CrossValidate", "FixedC", "LassoFit", "LinkKind", "PairedStudy", "Scenario",
           "SolverOptions", "TargetFunctional", "expit", "validate_study"]
