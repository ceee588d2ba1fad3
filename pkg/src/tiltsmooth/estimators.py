"""scikit-learn compatible estimators.

All of them regress a response on a single feature: ``X`` may be 1-D or a
single-column 2-D array. Bandwidths left as ``None`` are selected in
``fit`` (LOOCV for NW/LL, the flat-top rule of thumb for the IO comparator,
the joint tilting search for tilted smoothers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bandwidth import select_h_cv, select_h_rot_io
from .kernels import Kernel
from .smoothers import FittedSmoother, Sample, SmootherKind
from .tilting import (
    OptimizerConfig,
    TiltObjective,
    expand_p,
    fit_comparator,
    fit_tilted,
    objective,
    tilted_predict,
)

__all__ = [
    "NadarayaWatson",
    "LocalLinear",
    "FlatTopRegressor",
    "TiltedRegressor",
    "EstimatorSpec",
    "fit_spec",
]


def _column(X) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature, got {X.shape[1]} columns")
        X = X[:, 0]
    return X


def _sample(X, y, eval_interval) -> Sample:
    X, y = check_X_y(X, y, ensure_2d=False, dtype=np.float64, y_numeric=True)
    return Sample(_column(X), y, eval_interval)


class _KernelSmoother(RegressorMixin, BaseEstimator):
    _kind: SmootherKind

    def __init__(self, kernel="gaussian", bandwidth=None, h_grid=None, eval_interval=None):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.h_grid = h_grid
        self.eval_interval = eval_interval

    def fit(self, X, y):
        s = _sample(X, y, self.eval_interval)
        kernel = Kernel.coerce(self.kernel)
        if self.bandwidth is None:
            self.cv_ = select_h_cv(s, self._kind, kernel, self.h_grid)
            h = self.cv_.h_star
        else:
            self.cv_ = None
            h = float(self.bandwidth)
        self.smoother_ = FittedSmoother(self._kind, kernel, h, s)
        self.bandwidth_ = h
        return self

    def predict(self, X):
        check_is_fitted(self, "smoother_")
        return self.smoother_.predict(_column(X))

    def weights(self, x: float) -> np.ndarray:
        check_is_fitted(self, "smoother_")
        return self.smoother_.weights(x)


class NadarayaWatson(_KernelSmoother):
    _kind = SmootherKind.NW


class LocalLinear(_KernelSmoother):
    _kind = SmootherKind.LL


class FlatTopRegressor(RegressorMixin, BaseEstimator):
    """Nadaraya-Watson form with the infinite-order trapezoidal kernel (the IO estimator)."""

    def __init__(self, bandwidth=None, eval_interval=None):
        self.bandwidth = bandwidth
        self.eval_interval = eval_interval

    def fit(self, X, y):
        s = _sample(X, y, self.eval_interval)
        h = select_h_rot_io(s) if self.bandwidth is None else float(self.bandwidth)
        self.smoother_ = FittedSmoother(SmootherKind.IO, Kernel.TRAPEZOIDAL, h, s)
        self.bandwidth_ = h
        return self

    def predict(self, X):
        check_is_fitted(self, "smoother_")
        return self.smoother_.predict(_column(X))


class TiltedRegressor(RegressorMixin, BaseEstimator):
    """Tilted NW or LL smoother pulled toward the flat-top comparator.

    Parameters
    ----------
    base : {"nw", "ll"}
    kernel : {"gaussian", "epanechnikov"}
    n_nodes : int
        Number of tilt nodes placed at design quantiles.
    bandwidth : float, optional
        Fix h and search only over node values.
    start_bandwidth : float, optional
        Bandwidth of the uniform-tilt seed; LOOCV of the base smoother if None.
    comparator_bandwidth : float, optional
        Bandwidth of the comparator; rule of thumb if None.
    eval_interval : (float, float), optional
        Interval of the L2 distance; the design range if None.
    """

    def __init__(self, base="nw", kernel="gaussian", n_nodes=4, bandwidth=None,
                 start_bandwidth=None, comparator_bandwidth=None, eval_interval=None,
                 grid_points=201, max_evals=500, h_grid_size=40, tol=1e-8):
        self.base = base
        self.kernel = kernel
        self.n_nodes = n_nodes
        self.bandwidth = bandwidth
        self.start_bandwidth = start_bandwidth
        self.comparator_bandwidth = comparator_bandwidth
        self.eval_interval = eval_interval
        self.grid_points = grid_points
        self.max_evals = max_evals
        self.h_grid_size = h_grid_size
        self.tol = tol

    def fit(self, X, y):
        s = _sample(X, y, self.eval_interval)
        kind = SmootherKind.coerce(self.base)
        kernel = Kernel.coerce(self.kernel)
        config = OptimizerConfig(max_evals=self.max_evals, h_grid_size=self.h_grid_size,
                                 tol=self.tol, grid_points=self.grid_points)
        comparator = fit_comparator(s, self.comparator_bandwidth)
        h_start, h_grid = self.start_bandwidth, None
        if self.bandwidth is not None:
            h_start = float(self.bandwidth)
            h_grid = [h_start]
        self.fit_ = fit_tilted(s, kind, kernel, int(self.n_nodes), comparator, config,
                               h_start=h_start, h_grid=h_grid)
        self.sample_ = s
        self.comparator_ = comparator
        self.tilt_params_ = self.fit_.params
        self.bandwidth_ = self.fit_.params.h
        self.node_values_ = self.fit_.params.node_values
        self.objective_ = self.fit_.objective
        self.p_ = expand_p(self.fit_.params, s)
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return tilted_predict(self.sample_, self.base, self.kernel, self.tilt_params_, _column(X))

    def objective_at(self, params=None) -> float:
        """L2 distance to the comparator for ``params`` (the fitted tilt by default)."""
        check_is_fitted(self, "fit_")
        obj = TiltObjective.build(self.comparator_, self.base, self.sample_.eval_interval, self.grid_points)
        return objective(self.sample_, obj, self.kernel, params or self.tilt_params_)


ESTIMATOR_KINDS = ("io", "nw", "ll", "tilted-nw", "tilted-ll")


@dataclass(frozen=True)
class EstimatorSpec:
    """Estimator description shared by the simulation harness, the real-data
    comparisons and the CLI."""

    kind: str
    nodes: int = 4
    kernel: str = "gaussian"
    h: float | None = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator {self.kind!r}; expected one of {', '.join(ESTIMATOR_KINDS)}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "kernel", Kernel.coerce(self.kernel).value)
        if kind.startswith("tilted") and int(self.nodes) < 2:
            raise ValueError("tilted estimators need at least 2 nodes")
        if self.h is not None and not float(self.h) > 0:
            raise ValueError("h must be positive")

    @property
    def tilted(self) -> bool:
        return self.kind.startswith("tilted")

    @property
    def base(self) -> str:
        return self.kind.split("-")[-1]

    @property
    def name(self) -> str:
        label = self.base.upper()
        return f"{label} p{self.nodes}" if self.tilted else label


def fit_spec(spec: EstimatorSpec, s: Sample, cache: dict | None = None,
             optimizer: OptimizerConfig | None = None):
    """Fit ``spec`` on ``s``; ``cache`` shares CV and rule-of-thumb bandwidths
    between estimators fitted on the same sample."""
    cache = {} if cache is None else cache
    optimizer = optimizer or OptimizerConfig()
    X, y = s.x, s.y

    def cv_h(kind):
        key = ("cv", kind, spec.kernel)
        if key not in cache:
            cache[key] = select_h_cv(s, kind, spec.kernel).h_star
        return cache[key]

    def rot_h():
        if "rot" not in cache:
            cache["rot"] = select_h_rot_io(s)
        return cache["rot"]

    if spec.kind == "io":
        return FlatTopRegressor(bandwidth=spec.h or rot_h(), eval_interval=s.eval_interval).fit(X, y)
    if not spec.tilted:
        cls = NadarayaWatson if spec.kind == "nw" else LocalLinear
        return cls(kernel=spec.kernel, bandwidth=spec.h or cv_h(spec.kind),
                   eval_interval=s.eval_interval).fit(X, y)
    return TiltedRegressor(
        base=spec.base, kernel=spec.kernel, n_nodes=spec.nodes, bandwidth=spec.h,
        start_bandwidth=None if spec.h else cv_h(spec.base), comparator_bandwidth=rot_h(),
        eval_interval=s.eval_interval, grid_points=optimizer.grid_points,
        max_evals=optimizer.max_evals, h_grid_size=optimizer.h_grid_size, tol=optimizer.tol,
    ).fit(X, y)
