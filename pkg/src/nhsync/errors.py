"""Exception hierarchy shared by all nhsync modules."""
from __future__ import annotations


class NhsyncError(Exception):
    """Base class for library errors."""


class DomainError(NhsyncError, ValueError):
    """Arguments outside the documented domain of an operation."""


class IntegrationError(NhsyncError):
    """Step-size underflow or other integrator breakdown.

    ``last_time`` is the last time at which the state was still trusted.
    """

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good t={last_time!r})")
        self.last_time = last_time


class NonFiniteError(IntegrationError):
    """The vector field returned NaN or inf."""


class OrthogonalityError(NhsyncError):
    """Tangent frame lost orthogonality after re-orthonormalisation."""


class ChartEscapeError(DomainError):
    """A trajectory left the validity domain of a phase/normal chart."""


class InsufficientDataError(NhsyncError):
    """Too few samples or crossings for a meaningful estimate."""


class InsufficientSamplingError(InsufficientDataError):
    """Ensemble left too many grid cells empty."""


class PreconditionError(NhsyncError):
    """An operation was called on inputs violating its precondition."""


class ConfigError(NhsyncError):
    """Experiment configuration failed validation."""
