"""Tilted Nadaraya-Watson and local linear smoothers pulled toward a flat-top kernel estimate."""

from .estimators import (
    EstimatorSpec,
    FlatTopRegressor,
    LocalLinear,
    NadarayaWatson,
    TiltedRegressor,
    fit_spec,
)
from .kernels import Kernel, eval_kernel
from .smoothers import FittedSmoother, Sample, SmootherKind
from .tilting import OptimizerConfig, TiltParams, fit_tilted

__version__ = "0.1.0"

__all__ = [
    "EstimatorSpec",
    "FlatTopRegressor",
    "FittedSmoother",
    "Kernel",
    "LocalLinear",
    "NadarayaWatson",
    "OptimizerConfig",
    "Sample",
    "SmootherKind",
    "TiltParams",
    "TiltedRegressor",
    "eval_kernel",
    "fit_spec",
    "fit_tilted",
]
