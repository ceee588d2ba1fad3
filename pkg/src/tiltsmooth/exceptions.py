"""Exception hierarchy.

Smoother failures carry the offending query point so callers (CV, ISE
evaluation, the tilting objective) can decide whether to penalise, skip
or abort.
"""

from __future__ import annotations


class TiltSmoothError(Exception):
    """Base class for all errors raised by this package."""


class KernelDomainError(TiltSmoothError, ValueError):
    """Kernel or Fourier profile evaluated at a non-finite argument."""


class SmootherError(TiltSmoothError, ValueError):
    """A weight vector could not be formed at query point ``x``."""

    def __init__(self, message: str, x: float | None = None):
        super().__init__(message)
        self.x = x


class EmptyNeighborhood(SmootherError):
    pass


class DegenerateDesign(SmootherError):
    pass


class UnstableDenominator(SmootherError):
    pass


class BandwidthInfeasible(TiltSmoothError, ValueError):
    pass


class ZeroTilt(TiltSmoothError, ValueError):
    pass


class ObjectiveInfeasible(TiltSmoothError):
    def __init__(self, message: str, x: float | None = None):
        super().__init__(message)
        self.x = x


class OptimizerFailed(TiltSmoothError):
    pass


class InsufficientDesign(TiltSmoothError, ValueError):
    pass


class DataFormatError(TiltSmoothError, ValueError):
    """Malformed input file; ``row`` is the 1-based line number when known."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class UnknownSeries(TiltSmoothError, LookupError):
    pass


class ConfigError(TiltSmoothError, ValueError):
    """Config schema violation; ``field`` is a dotted path such as ``scenarios[2].sigma``."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DoseDomainError(TiltSmoothError, ValueError):
    """Non-positive or non-finite dose passed to the logistic model."""
