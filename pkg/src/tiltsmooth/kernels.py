"""Kernel functions and the Fourier profile of the flat-top trapezoidal kernel.

The trapezoidal kernel

    K(x) = 2 (cos(x/2) - cos(x)) / (pi x^2)

has Fourier transform lambda(s) equal to 1 on |s| <= 1/2, decaying linearly to
zero at |s| = 1. It is an infinite-order kernel: it is not a density (it takes
negative values) but it integrates to one and its bias vanishes faster than
any polynomial rate for smooth targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import factorial, pi
from typing import Callable

import numpy as np
from scipy.integrate import simpson
from scipy.special import sici

from .exceptions import KernelDomainError

__all__ = [
    "Kernel",
    "FourierProfile",
    "TRAPEZOID_PROFILE",
    "eval_kernel",
    "eval_fourier",
    "kernel_integral",
    "kernel_l2_norm",
    "trapezoid_series",
    "trapezoid_direct",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# |x| below this switches the trapezoid to its Taylor series.
SERIES_SWITCH = 1e-3

# Quadrature half-width for the slowly decaying trapezoid.
TRAPEZOID_CUTOFF = 200.0


class Kernel(str, Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"
    TRAPEZOIDAL = "trapezoidal"

    @property
    def compact(self) -> bool:
        return self is Kernel.EPANECHNIKOV

    @property
    def nonnegative(self) -> bool:
        return self is not Kernel.TRAPEZOIDAL

    def __call__(self, x):
        return eval_kernel(self, x)

    @classmethod
    def coerce(cls, value: "Kernel | str") -> "Kernel":
        if isinstance(value, cls):
            return value
        name = str(value).lower()
        aliases = {"gauss": "gaussian", "epan": "epanechnikov", "trapezoid": "trapezoidal"}
        try:
            return cls(aliases.get(name, name))
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown kernel {value!r}; expected one of {valid}") from None


# Taylor coefficients of K_trap(x) in powers of x^2:
#   cos(x/2) - cos(x) = sum_{k>=1} (-1)^k (4^-k - 1) x^(2k) / (2k)!
_TRAP_SERIES = tuple(
    (2.0 / pi) * (-1) ** k * (4.0**-k - 1.0) / factorial(2 * k) for k in range(1, 5)
)


def trapezoid_series(x):
    """Four-term even Taylor series of the trapezoidal kernel (accurate for |x| < 1e-3)."""
    x2 = np.square(np.asarray(x, dtype=float))
    c0, c1, c2, c3 = _TRAP_SERIES
    return c0 + x2 * (c1 + x2 * (c2 + x2 * c3))


def trapezoid_direct(x):
    """Closed form written as 4 sin(3x/4) sin(x/4) / (pi x^2).

    The product form is algebraically identical to the cosine difference but
    does not cancel catastrophically for small x. Undefined at x = 0.
    """
    x = np.asarray(x, dtype=float)
    return 4.0 * np.sin(0.75 * x) * np.sin(0.25 * x) / (pi * x * x)


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise KernelDomainError("kernel argument must be finite")


def eval_kernel(kernel: Kernel | str, x):
    """Evaluate kernel ``kernel`` at ``x`` (scalar or array)."""
    kernel = Kernel.coerce(kernel)
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    if kernel is Kernel.GAUSSIAN:
        out = np.exp(-0.5 * arr * arr) / _SQRT_2PI
    elif kernel is Kernel.EPANECHNIKOV:
        out = 0.75 * np.maximum(0.0, 1.0 - arr * arr)
    else:
        small = np.abs(arr) < SERIES_SWITCH
        safe = np.where(small, 1.0, arr)
        out = np.where(small, trapezoid_series(arr), trapezoid_direct(safe))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class FourierProfile:
    """Fourier transform ``lam`` of a flat-top kernel, equal to 1 on ``|s| <= flat_radius``."""

    lam: Callable[[np.ndarray], np.ndarray]
    flat_radius: float


def _trapezoid_lambda(s):
    a = np.abs(s)
    return np.where(a <= 0.5, 1.0, np.where(a <= 1.0, 2.0 * (1.0 - a), 0.0))


TRAPEZOID_PROFILE = FourierProfile(lam=_trapezoid_lambda, flat_radius=0.5)


def eval_fourier(profile: FourierProfile, s):
    arr = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise KernelDomainError("frequency must be finite")
    out = np.asarray(profile.lam(arr), dtype=float)
    return float(out) if out.ndim == 0 else out


def _cos_over_x2_tail(a: float, L: float) -> float:
    # int_L^inf cos(a x) / x^2 dx, by parts against Si
    si, _ = sici(a * L)
    return np.cos(a * L) / L - a * (pi / 2.0 - si)


def _grid_integral(kernel: Kernel, power: int) -> float:
    if kernel is Kernel.GAUSSIAN:
        lo, hi, step = -14.0, 14.0, 1e-3
    elif kernel is Kernel.EPANECHNIKOV:
        lo, hi, step = -1.0, 1.0, 1e-3
    else:
        lo, hi, step = -TRAPEZOID_CUTOFF, TRAPEZOID_CUTOFF, 5e-3
    n = int(round((hi - lo) / step)) + 1
    grid = np.linspace(lo, hi, n)
    return float(simpson(eval_kernel(kernel, grid) ** power, x=grid))


def kernel_integral(kernel: Kernel | str) -> float:
    """Numerical integral of K over the real line.

    For the trapezoid the two tails beyond +-200 are added in closed form
    via the sine integral.
    """
    kernel = Kernel.coerce(kernel)
    total = _grid_integral(kernel, 1)
    if kernel is Kernel.TRAPEZOIDAL:
        L = TRAPEZOID_CUTOFF
        tail = (2.0 / pi) * (_cos_over_x2_tail(0.5, L) - _cos_over_x2_tail(1.0, L))
        total += 2.0 * tail
    return total


def kernel_l2_norm(kernel: Kernel | str) -> float:
    """Numerical value of the integral of K(x)^2 over the real line.

    Gaussian gives 1/(2 sqrt(pi)), Epanechnikov 3/5, the trapezoid 2/(3 pi).
    """
    kernel = Kernel.coerce(kernel)
    total = _grid_integral(kernel, 2)
    if kernel is Kernel.TRAPEZOIDAL:
        # K^2 ~ 4 (cos(x/2) - cos x)^2 / (pi^2 x^4); the squared bracket averages to 1
        L = TRAPEZOID_CUTOFF
        total += 2.0 * 4.0 / (3.0 * pi**2 * L**3)
    return total
