"""Linear smoothers: Nadaraya-Watson, local linear and the flat-top (IO) comparator.

Every estimator here predicts ``l(x) @ y`` with a weight vector summing to one.
Weights are built row-wise for a batch of query points; a row that cannot be
normalised is reported with a failure code instead of producing garbage, and
the public functions turn that code into the matching exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import DegenerateDesign, EmptyNeighborhood, SmootherError, UnstableDenominator
from .kernels import Kernel, eval_kernel

__all__ = [
    "Sample",
    "SmootherKind",
    "FittedSmoother",
    "weight_matrix",
    "nw_weights",
    "ll_weights",
    "io_weights",
    "predict",
]

# Relative thresholds separating true degeneracy from roundoff.
LL_DENOM_RTOL = 1e-12
IO_DENOM_ATOL = 1e-10  # multiplied by the number of observations

OK, EMPTY, DEGENERATE, UNSTABLE = 0, 1, 2, 3


class SmootherKind(str, Enum):
    NW = "nw"
    LL = "ll"
    IO = "io"

    @classmethod
    def coerce(cls, value: "SmootherKind | str") -> "SmootherKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown smoother kind {value!r}; expected nw, ll or io") from None


@dataclass(frozen=True)
class Sample:
    """Paired design points and responses plus the interval used for L2 quantities."""

    x: np.ndarray
    y: np.ndarray
    eval_interval: tuple[float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError(f"x and y lengths differ ({x.size} != {y.size})")
        if x.size < 2:
            raise ValueError("a sample needs at least two observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("sample contains non-finite values")
        interval = self.eval_interval
        if interval is None:
            interval = (float(x.min()), float(x.max()))
        a, b = (float(v) for v in interval)
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError(f"eval_interval must satisfy a < b, got {interval!r}")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "eval_interval", (a, b))

    @property
    def n(self) -> int:
        return self.x.size

    def drop(self, i: int) -> "Sample":
        keep = np.arange(self.n) != i
        return Sample(self.x[keep], self.y[keep], self.eval_interval)

    def with_y(self, y) -> "Sample":
        return Sample(self.x, y, self.eval_interval)


def _kernel_rows(kernel: Kernel, xdata: np.ndarray, xs: np.ndarray, h: float,
                 exclude: np.ndarray | None = None):
    """Kernel matrix K[q, i] = K((X_i - x_q)/h) and offsets D[q, i] = X_i - x_q.

    Gaussian rows are rescaled by a per-row constant to avoid underflow; every
    consumer forms ratios of row sums, so the constant cancels. ``exclude`` is
    a boolean mask of (row, column) pairs to drop (used for leave-one-out).
    """
    d = xdata[None, :] - xs[:, None]
    u = d / h
    if kernel is Kernel.GAUSSIAN:
        q = 0.5 * u * u
        if exclude is not None:
            q[exclude] = np.inf
        q -= q.min(axis=1, keepdims=True)
        k = np.exp(-q)
    else:
        k = eval_kernel(kernel, u)
        if exclude is not None:
            k[exclude] = 0.0
    return k, d


def _normalise(kind: SmootherKind, k: np.ndarray, d: np.ndarray, n_used: int):
    """Turn kernel rows into weight rows. Returns (weights, status codes)."""
    status = np.zeros(k.shape[0], dtype=np.int8)
    if kind is SmootherKind.LL:
        s0 = k.sum(axis=1)
        kd = k * d
        s1 = kd.sum(axis=1)
        s2 = (kd * d).sum(axis=1)
        b = k * s2[:, None] - kd * s1[:, None]
        denom = b.sum(axis=1)
        status[np.abs(denom) <= LL_DENOM_RTOL * np.abs(s0 * s2)] = DEGENERATE
        status[s0 == 0.0] = EMPTY
        num = b
    else:
        denom = k.sum(axis=1)
        if kind is SmootherKind.IO:
            status[np.abs(denom) < IO_DENOM_ATOL * n_used] = UNSTABLE
        else:
            status[denom == 0.0] = EMPTY
        num = k
    bad = status != OK
    safe = np.where(bad, 1.0, denom)
    w = num / safe[:, None]
    w[bad] = np.nan
    return w, status


def _kind_kernel(kind: SmootherKind, kernel: Kernel | str) -> Kernel:
    if kind is SmootherKind.IO:
        return Kernel.TRAPEZOIDAL
    return Kernel.coerce(kernel)


def weight_matrix(kind, kernel, xdata, h: float, xs, *, strict: bool = True):
    """Weights for many query points at once: row q is l(xs[q]).

    With ``strict=False`` returns ``(W, status)`` where failed rows are NaN
    and ``status`` holds per-row failure codes; otherwise raises on the first
    failed row.
    """
    kind = SmootherKind.coerce(kind)
    kernel = _kind_kernel(kind, kernel)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h!r}")
    xdata = np.asarray(xdata, dtype=float).ravel()
    xs = np.atleast_1d(np.asarray(xs, dtype=float)).ravel()
    if not np.all(np.isfinite(xs)):
        raise ValueError("query points must be finite")
    k, d = _kernel_rows(kernel, xdata, xs, h)
    w, status = _normalise(kind, k, d, xdata.size)
    if not strict:
        return w, status
    failed = np.flatnonzero(status)
    if failed.size:
        q = failed[0]
        raise _error_for(status[q], kind, float(xs[q]), h)
    return w


def _error_for(code: int, kind: SmootherKind, x: float, h: float) -> SmootherError:
    if code == EMPTY:
        return EmptyNeighborhood(
            f"{kind.value}: no observations within bandwidth h={h:g} of x={x:g} "
            "(bandwidth too small or x outside the data range)", x)
    if code == DEGENERATE:
        return DegenerateDesign(
            f"{kind.value}: local design is degenerate at x={x:g} with h={h:g}", x)
    return UnstableDenominator(
        f"{kind.value}: kernel weight sum is numerically zero at x={x:g} with h={h:g}", x)


def nw_weights(xdata, x: float, h: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> np.ndarray:
    """Nadaraya-Watson weights K((X_i - x)/h) / sum_j K((X_j - x)/h)."""
    return weight_matrix(SmootherKind.NW, kernel, xdata, h, [x])[0]


def ll_weights(xdata, x: float, h: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> np.ndarray:
    """Local linear weights b_i(x) / sum_j b_j(x), b_i = K_i (S2 - (X_i - x) S1)."""
    return weight_matrix(SmootherKind.LL, kernel, xdata, h, [x])[0]


def io_weights(xdata, x: float, h: float) -> np.ndarray:
    """Flat-top comparator weights: Nadaraya-Watson form with the trapezoidal kernel.

    Individual weights may be negative.
    """
    return weight_matrix(SmootherKind.IO, Kernel.TRAPEZOIDAL, xdata, h, [x])[0]


@dataclass(frozen=True)
class FittedSmoother:
    kind: SmootherKind
    kernel: Kernel
    h: float
    sample: Sample

    def __post_init__(self):
        kind = SmootherKind.coerce(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "kernel", _kind_kernel(kind, self.kernel))
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"bandwidth must be positive, got {self.h!r}")
        object.__setattr__(self, "h", float(self.h))

    def weights(self, x: float) -> np.ndarray:
        return self.weight_matrix([x])[0]

    def weight_matrix(self, xs, *, strict: bool = True):
        return weight_matrix(self.kind, self.kernel, self.sample.x, self.h, xs, strict=strict)

    def predict(self, xs) -> np.ndarray:
        return self.weight_matrix(xs) @ self.sample.y


def predict(f: FittedSmoother, xs) -> np.ndarray:
    return f.predict(xs)
