"""Deterministic Nelder-Mead with an evaluation budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool


def nelder_mead(f, x0, step=0.5, max_evals: int = 500, ftol: float = 1e-8, fatol: float = 0.0,
                xtol: float | None = None, adaptive: bool = False) -> OptimizeResult:
    """Minimise ``f`` from ``x0``.

    Stops when the spread of simplex values is below ``ftol`` relative to the
    best value plus ``fatol`` (and, if given, the simplex diameter is below
    ``xtol``), or when
    ``max_evals`` evaluations are spent. Always returns the best vertex seen;
    ``converged`` is False when the budget ran out first. Infinite values are
    allowed and simply rank last.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    dim = x0.size
    if adaptive:
        alpha, gamma, rho, sigma = 1.0, 1.0 + 2.0 / dim, 0.75 - 0.5 / dim, 1.0 - 1.0 / dim
    else:
        alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5

    steps = np.broadcast_to(np.asarray(step, dtype=float), (dim,))
    simplex = np.vstack([x0, x0 + np.diag(steps)])
    fvals = np.empty(dim + 1)
    nfev = 0
    for i in range(dim + 1):
        fvals[i] = f(simplex[i])
        nfev += 1

    def is_converged() -> bool:
        fmin, fmax = fvals[0], fvals[-1]
        if not np.isfinite(fmax):
            return False
        if fmax - fmin > ftol * abs(fmin) + fatol:
            return False
        if xtol is not None and np.max(np.abs(simplex[1:] - simplex[0])) > xtol:
            return False
        return True

    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if is_converged():
            converged = True
            break
        if nfev >= max_evals:
            break
        centroid = simplex[:-1].sum(axis=0) / dim
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = f(xr)
        nfev += 1
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            nfev += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)
            fc = f(xc)
            nfev += 1
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)
            fc = f(xc)
            nfev += 1
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        # shrink toward the best vertex
        for i in range(1, dim + 1):
            simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
            fvals[i] = f(simplex[i])
            nfev += 1

    best = int(np.argmin(fvals))
    return OptimizeResult(x=simplex[best].copy(), fun=float(fvals[best]), nfev=nfev, converged=converged)
