"""Tilted linear smoothers.

A tilted smoother reweights the observations of a base smoother (NW or LL)
by a probability vector p and predicts

    r_hat(x | h, p) = sum_i (n p_i) l_i(x) Y_i ,

so that uniform p (p_i = 1/n) gives back the base smoother. The bandwidth h
and p are chosen to minimise the L2 distance, over the evaluation interval,
to the flat-top trapezoidal comparator whose bandwidth stays fixed.

p has one entry per observation but is parameterised by m node values placed
at equally spaced quantiles of the design: the raw tilt at X_i is the
piecewise-linear interpolant of the node values (clamped beyond the end
nodes), normalised to sum to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from ._optim import nelder_mead
from .bandwidth import default_h_grid, select_h_cv, select_h_rot_io
from .exceptions import ObjectiveInfeasible, OptimizerFailed, SmootherError, ZeroTilt
from .kernels import Kernel
from .smoothers import FittedSmoother, Sample, SmootherKind, weight_matrix

__all__ = [
    "OptimizerConfig",
    "TiltParams",
    "TiltObjective",
    "TiltFit",
    "quantile_nodes",
    "interpolation_basis",
    "expand_p",
    "tilted_predict",
    "objective",
    "fit_comparator",
    "fit_tilted",
]

log = logging.getLogger(__name__)

_SOFTPLUS_ONE = float(np.log(np.expm1(1.0)))  # softplus(_SOFTPLUS_ONE) == 1


@dataclass(frozen=True)
class OptimizerConfig:
    """Search settings for :func:`fit_tilted`.

    ``max_evals`` is the Nelder-Mead budget per candidate bandwidth, ``tol``
    the relative spread of simplex objective values that counts as converged.
    """

    max_evals: int = 500
    h_grid_size: int = 40
    tol: float = 1e-8
    grid_points: int = 201
    init_step: float = 1.0

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be positive")
        if self.h_grid_size < 1:
            raise ValueError("h_grid_size must be positive")
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def quantile_nodes(x, m: int) -> np.ndarray:
    """m node positions at equally spaced quantiles of the distinct design values.

    Using distinct values keeps the positions strictly increasing when the
    design has ties (replicated doses, for instance).
    """
    if m < 2:
        raise ValueError("at least two nodes are required")
    u = np.unique(np.asarray(x, dtype=float))
    if u.size < 2:
        raise ValueError("design needs at least two distinct values to place nodes")
    return np.quantile(u, np.linspace(0.0, 1.0, m))


@dataclass(frozen=True)
class TiltParams:
    h: float
    node_values: np.ndarray
    node_positions: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.node_values, dtype=float).ravel()
        positions = np.asarray(self.node_positions, dtype=float).ravel()
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"bandwidth must be positive, got {self.h!r}")
        if values.shape != positions.shape or values.size < 2:
            raise ValueError("need matching node_values and node_positions, at least two of each")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("node values must be finite and nonnegative")
        if not np.any(values > 0):
            raise ZeroTilt("all node values are zero")
        if np.any(np.diff(positions) <= 0):
            raise ValueError("node positions must be strictly increasing")
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "node_values", values)
        object.__setattr__(self, "node_positions", positions)

    @property
    def m(self) -> int:
        return self.node_values.size

    @classmethod
    def uniform(cls, x, h: float, m: int) -> "TiltParams":
        return cls(h, np.full(m, 1.0 / m), quantile_nodes(x, m))


def interpolation_basis(x, positions) -> np.ndarray:
    """Matrix B with B @ values equal to the clamped linear interpolant at x."""
    x = np.asarray(x, dtype=float)
    m = len(positions)
    return np.column_stack([np.interp(x, positions, np.eye(m)[k]) for k in range(m)])


def expand_p(t: TiltParams, s: Sample) -> np.ndarray:
    pos = t.node_positions
    if pos[0] < s.x.min() - 1e-12 * abs(s.x.min()) or pos[-1] > s.x.max() + 1e-12 * abs(s.x.max()):
        raise ValueError("node positions must lie within the design range")
    raw = np.interp(s.x, pos, t.node_values)
    total = raw.sum()
    if total <= 0:
        raise ZeroTilt("interpolated tilt is zero at every observation")
    return raw / total


def tilted_predict(s: Sample, base_kind, kernel, t: TiltParams, xs) -> np.ndarray:
    p = expand_p(t, s)
    w = weight_matrix(base_kind, kernel, s.x, t.h, xs)
    return w @ (s.n * p * s.y)


def quadrature_grid(a: float, b: float, points: int):
    """Uniform grid on [a, b] with composite trapezoid weights (summing to b - a)."""
    grid = np.linspace(a, b, points)
    w = np.full(points, (b - a) / (points - 1))
    w[[0, -1]] *= 0.5
    return grid, w


@dataclass(frozen=True)
class TiltObjective:
    comparator: FittedSmoother
    base_kind: SmootherKind
    grid: np.ndarray
    weights: np.ndarray
    target: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, comparator: FittedSmoother, base_kind, interval=None,
              grid_points: int = 201) -> "TiltObjective":
        a, b = comparator.sample.eval_interval if interval is None else interval
        grid, w = quadrature_grid(a, b, grid_points)
        try:
            target = comparator.predict(grid)
        except SmootherError as exc:
            raise ObjectiveInfeasible(f"comparator cannot be evaluated: {exc}", exc.x) from exc
        return cls(comparator, SmootherKind.coerce(base_kind), grid, w, target)


def objective(s: Sample, obj: TiltObjective, kernel, t: TiltParams) -> float:
    """Quadrature L2 distance between the tilted smoother and the comparator."""
    try:
        pred = tilted_predict(s, obj.base_kind, kernel, t, obj.grid)
    except SmootherError as exc:
        raise ObjectiveInfeasible(f"tilted smoother undefined at x={exc.x:g}: {exc}", exc.x) from exc
    diff = pred - obj.target
    return float(np.sqrt(obj.weights @ (diff * diff)))


@dataclass(frozen=True)
class TiltFit:
    params: TiltParams
    objective: float
    start_objective: float
    h_start: float
    converged: bool
    nfev: int
    infeasible_h: tuple[float, ...] = ()

    def __iter__(self):
        yield self.params
        yield self.objective


def fit_comparator(s: Sample, h: float | None = None) -> FittedSmoother:
    """Flat-top comparator with rule-of-thumb bandwidth unless ``h`` is given."""
    return FittedSmoother(SmootherKind.IO, Kernel.TRAPEZOIDAL, select_h_rot_io(s) if h is None else h, s)


class _NodeSearch:
    """Objective in node-value space for one bandwidth, reduced to an m x m quadratic form.

    With raw = B v, the tilted prediction on the grid is n (M v) / (c . v)
    where M = W diag(y) B and c = B^T 1, so the squared distance is
    u^T Q u - 2 g^T u + t0 with u = n v / (c . v).
    """

    def __init__(self, w_grid, y, basis, quad_w, target):
        n = y.size
        m_mat = w_grid @ (y[:, None] * basis)
        sw = np.sqrt(quad_w)
        a = sw[:, None] * m_mat
        tt = sw * target
        self.q = a.T @ a
        self.g2 = 2.0 * (a.T @ tt)
        self.t0 = float(tt @ tt)
        self.c = basis.sum(axis=0) / n

    def value(self, v) -> float:
        u = v / (self.c @ v)
        sq = float(u @ (self.q @ u - self.g2)) + self.t0
        return sqrt(sq) if sq > 0.0 else 0.0

    def __call__(self, z) -> float:
        return self.value(np.logaddexp(0.0, z))


def fit_tilted(s: Sample, base_kind, kernel, m: int, comparator: FittedSmoother,
               config: OptimizerConfig | None = None, *, h_start: float | None = None,
               h_grid=None) -> TiltFit:
    """Jointly choose (h, node values) minimising the distance to ``comparator``.

    Each candidate bandwidth (the default CV grid plus ``h_start``) gets a
    Nelder-Mead search over softplus-transformed node values seeded at the
    uniform tilt. ``h_start`` defaults to the LOOCV bandwidth of the base
    smoother; the uniform tilt at ``h_start`` (or at the smallest larger
    candidate where it is defined on the grid) is the baseline the result
    never exceeds.
    """
    config = config or OptimizerConfig()
    base_kind = SmootherKind.coerce(base_kind)
    if base_kind is SmootherKind.IO:
        raise ValueError("tilting applies to nw or ll base smoothers")
    kernel = Kernel.coerce(kernel)
    if m < 2:
        raise ValueError("at least two nodes are required")
    if h_start is None:
        h_start = select_h_cv(s, base_kind, kernel).h_star
    obj = TiltObjective.build(comparator, base_kind, s.eval_interval, config.grid_points)

    positions = quantile_nodes(s.x, m)
    basis = interpolation_basis(s.x, positions)
    uniform_v = np.ones(m)
    candidates = default_h_grid(s.x, config.h_grid_size) if h_grid is None else np.asarray(h_grid, float)
    candidates = np.unique(np.append(candidates, h_start))

    # a CV bandwidth below the gaps of a replicated design can leave the base
    # smoother undefined on the grid; the next feasible candidate seeds instead
    start_obj, failure = None, None
    for h0 in [h_start] + [float(h) for h in candidates if h > h_start]:
        start = TiltParams(h0, uniform_v / m, positions)
        try:
            start_obj = objective(s, obj, kernel, start)
            break
        except ObjectiveInfeasible as exc:
            failure = failure or exc
    if start_obj is None:
        raise OptimizerFailed(f"uniform tilt at starting bandwidth h={h_start:g} is infeasible: {failure}") from failure
    if h0 != h_start:
        log.debug("uniform tilt infeasible at h=%g; seeding at h=%g", h_start, h0)
        h_start = h0

    best = (start_obj, h_start, uniform_v)
    nfev_total = 0
    all_converged = True
    infeasible = []
    z0 = np.full(m, _SOFTPLUS_ONE)
    for h in candidates:
        w_grid, status = weight_matrix(base_kind, kernel, s.x, h, obj.grid, strict=False)
        if status.any():
            infeasible.append(float(h))
            continue
        search = _NodeSearch(w_grid, s.y, basis, obj.weights, obj.target)
        res = nelder_mead(search, z0, step=config.init_step, max_evals=config.max_evals, ftol=config.tol)
        nfev_total += res.nfev
        all_converged &= res.converged
        if res.fun < best[0]:
            best = (res.fun, float(h), np.logaddexp(0.0, res.x))

    _, h_best, v_best = best
    params = TiltParams(h_best, v_best / v_best.sum(), positions)
    achieved = objective(s, obj, kernel, params)
    if achieved > start_obj:
        # quadratic-form roundoff can rank a near-tie wrongly; the baseline wins
        params, achieved = start, start_obj
    if not all_converged:
        log.debug("node search hit the %d-evaluation budget for some bandwidths", config.max_evals)
    return TiltFit(params=params, objective=achieved, start_objective=start_obj, h_start=float(h_start),
                   converged=all_converged, nfev=nfev_total, infeasible_h=tuple(infeasible))
