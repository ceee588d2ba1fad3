"""Bandwidth selection.

Leave-one-out cross-validation for the second-order smoothers and a
flat-top threshold rule of thumb for the trapezoidal (IO) comparator.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log10, pi, sqrt

import numpy as np

from .exceptions import BandwidthInfeasible, DegenerateDesign, SmootherError
from .kernels import Kernel, eval_kernel
from .smoothers import (
    DEGENERATE,
    EMPTY,
    IO_DENOM_ATOL,
    LL_DENOM_RTOL,
    OK,
    UNSTABLE,
    Sample,
    SmootherKind,
    _kind_kernel,
    weight_matrix,
)

__all__ = [
    "CvResult",
    "default_h_grid",
    "loo_predictions",
    "loocv_score",
    "select_h_cv",
    "select_h_rot_io",
    "trig_correlations",
]

DEFAULT_GRID_SIZE = 40

# Consecutive sub-threshold frequencies required by the rule of thumb.
ROT_RUN = 5


@dataclass(frozen=True)
class CvResult:
    h_grid: np.ndarray
    scores: np.ndarray
    h_star: float

    @property
    def score(self) -> float:
        return float(self.scores[int(np.flatnonzero(self.h_grid == self.h_star)[0])])


def default_h_grid(x, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Log-spaced grid from a tenth of the mean design spacing up to half the design range."""
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    span = xs[-1] - xs[0]
    if xs.size < 2 or span <= 0:
        raise DegenerateDesign("design points are all equal; no bandwidth scale")
    lo = 0.1 * span / (xs.size - 1)
    return np.geomspace(lo, span / 2.0, size)


def loo_predictions(s: Sample, kind, kernel, h: float, *, refit: bool = False):
    """Leave-one-out fits r_(-i)(X_i).

    Returns ``(pred, ok)``; ``ok[i]`` is False where the fit without pair i
    could not be formed at X_i. The default path drops column i of the
    kernel matrix for row i, which is the n-1 point refit evaluated in one
    batch. ``refit=True`` builds each reduced sample explicitly.
    """
    kind = SmootherKind.coerce(kind)
    if refit:
        pred = np.empty(s.n)
        ok = np.ones(s.n, dtype=bool)
        for i in range(s.n):
            reduced = s.drop(i)
            assert reduced.n == s.n - 1
            try:
                w = weight_matrix(kind, kernel, reduced.x, h, [s.x[i]])[0]
            except SmootherError:
                ok[i] = False
                pred[i] = np.nan
                continue
            pred[i] = w @ reduced.y
        return pred, ok
    return _Pairwise(s).loo(kind, kernel, h)


class _Pairwise:
    """Pairwise offsets X_j - X_i shared by every bandwidth of a CV sweep."""

    def __init__(self, s: Sample):
        self.s = s
        self.d = s.x[None, :] - s.x[:, None]
        self.d2 = self.d * self.d
        self.diag = np.eye(s.n, dtype=bool)
        masked = np.where(self.diag, np.inf, self.d2)
        # Gaussian exponents shifted by each row's nearest neighbour, so the
        # largest off-diagonal kernel value per row is exactly 1
        self.log_k = -0.5 * (masked - masked.min(axis=1)[:, None])
        self._buf = np.empty_like(self.d)

    def loo(self, kind, kernel, h: float):
        kind = SmootherKind.coerce(kind)
        kern = _kind_kernel(kind, kernel)
        s, d = self.s, self.d
        if kern is Kernel.GAUSSIAN:
            k = np.multiply(self.log_k, 1.0 / (h * h), out=self._buf)
            np.exp(k, out=k)
        else:
            k = eval_kernel(kern, d / h)
            k[self.diag] = 0.0
        s0 = k.sum(axis=1)
        ky = k @ s.y
        status = np.zeros(s.n, dtype=np.int8)
        if kind is SmootherKind.LL:
            kd = k * d
            s1 = kd.sum(axis=1)
            s2 = np.einsum("ij,ij->i", kd, d)
            num = s2 * ky - s1 * (kd @ s.y)
            denom = s0 * s2 - s1 * s1
            status[np.abs(denom) <= LL_DENOM_RTOL * np.abs(s0 * s2)] = DEGENERATE
            status[s0 == 0.0] = EMPTY
        else:
            num, denom = ky, s0
            if kind is SmootherKind.IO:
                status[np.abs(denom) < IO_DENOM_ATOL * (s.n - 1)] = UNSTABLE
            else:
                status[denom == 0.0] = EMPTY
        ok = status == OK
        pred = np.full(s.n, np.nan)
        pred[ok] = num[ok] / denom[ok]
        return pred, ok


def _score(s: Sample, pred, ok, h) -> float:
    if not ok.any():
        raise BandwidthInfeasible(f"no leave-one-out fit is feasible at h={h:g}")
    resid = np.where(ok, s.y - np.where(ok, pred, 0.0), s.y)
    return float(np.mean(resid * resid))


def loocv_score(s: Sample, kind, kernel, h: float, *, refit: bool = False) -> float:
    """Mean squared leave-one-out residual.

    A point whose leave-one-out fit cannot be formed contributes Y_i^2, as if
    predicted by zero.
    """
    if s.n < 3:
        raise ValueError("leave-one-out CV needs at least 3 observations")
    pred, ok = loo_predictions(s, kind, kernel, h, refit=refit)
    return _score(s, pred, ok, h)


def select_h_cv(s: Sample, kind, kernel=Kernel.GAUSSIAN, grid=None) -> CvResult:
    """Grid minimiser of the LOOCV score; ties go to the smaller bandwidth."""
    grid = default_h_grid(s.x) if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("bandwidth grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("bandwidth grid must be positive and strictly increasing")
    if s.n < 3:
        raise ValueError("leave-one-out CV needs at least 3 observations")
    pairs = _Pairwise(s)
    scores = np.full(grid.size, np.inf)
    for j, h in enumerate(grid):
        try:
            scores[j] = _score(s, *pairs.loo(kind, kernel, h), h)
        except BandwidthInfeasible:
            pass
    if not np.isfinite(scores).any():
        raise BandwidthInfeasible("every bandwidth on the grid is infeasible")
    best = int(np.argmin(scores))
    return CvResult(h_grid=grid, scores=scores, h_star=float(grid[best]))


def trig_correlations(x, y, t_max: int) -> np.ndarray:
    """Normalised magnitudes rho(t), t = 1..t_max, of the trigonometric
    regression coefficients of y on x mapped affinely onto [0, 2 pi].

    rho(t) = |sum_i (y_i - ybar) exp(i t z_i)| / sqrt(n sum_i (y_i - ybar)^2),
    which lies in [0, 1] and is O(n^-1/2) when y carries no frequency-t signal.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    span = x.max() - x.min()
    z = 2.0 * pi * (x - x.min()) / span
    yc = y - y.mean()
    ss = float(yc @ yc)
    t = np.arange(1, t_max + 1)
    phase = np.outer(t, z)
    c = np.cos(phase) @ yc
    s_ = np.sin(phase) @ yc
    if ss == 0.0:
        return np.zeros(t_max)
    return np.hypot(c, s_) / sqrt(x.size * ss)


def select_h_rot_io(s: Sample | tuple) -> float:
    """Rule-of-thumb bandwidth for the trapezoidal comparator.

    t* is the first frequency after which ``ROT_RUN`` consecutive
    normalised coefficients fall below 2 sqrt(log10(n)/n). The bandwidth puts
    that frequency at the edge of the kernel's flat Fourier region
    (|h omega| = 1/2 with omega = 2 pi t*/range), i.e. h = range / (4 pi t*).
    """
    x, y = (s.x, s.y) if isinstance(s, Sample) else (np.asarray(s[0], float), np.asarray(s[1], float))
    n = x.size
    if n < 8:
        raise ValueError("the rule of thumb needs at least 8 observations")
    span = float(x.max() - x.min())
    if span <= 0:
        raise DegenerateDesign("design points are all equal")
    t_hi = ceil(n / 2)
    rho = trig_correlations(x, y, t_hi + ROT_RUN - 1)
    below = rho < 2.0 * sqrt(log10(n) / n)
    t_star = t_hi
    for t in range(1, t_hi + 1):
        if below[t - 1:t - 1 + ROT_RUN].all():
            t_star = t
            break
    return span / (4.0 * pi * t_star)
