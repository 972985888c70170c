"""Streaming majorization-minimization estimation for mixture-of-experts models."""

from .engine import (
    FitReport,
    MMState,
    StepSchedule,
    SurrogateFamily,
    mm_step,
    run_stream,
    stationarity_residual,
)
from .estimators import MixtureOfExpertsClassifier, MixtureOfExpertsRegressor
from .gaussian import GaussianDims, GaussianFamily, GaussianParams
from .logistic import LogisticDims, LogisticFamily, LogisticParams
from .optimizers import OptimizerConfig, optimizer_step, run_baseline

__all__ = [
    "FitReport",
    "MMState",
    "StepSchedule",
    "SurrogateFamily",
    "mm_step",
    "run_stream",
    "stationarity_residual",
    "MixtureOfExpertsRegressor",
    "MixtureOfExpertsClassifier",
    "GaussianDims",
    "GaussianFamily",
    "GaussianParams",
    "LogisticDims",
    "LogisticFamily",
    "LogisticParams",
    "OptimizerConfig",
    "optimizer_step",
    "run_baseline",
]

__version__ = "0.1.0"
