"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class CVFRError(Exception):
    """Base class for all library errors."""


class DimensionError(CVFRError, ValueError):
    pass


class RealityConditionViolated(CVFRError, ValueError):
    """The Hill constant is too large for the planted eigenvalue: beta^2 lambda^2 - 4c <= 0."""


class SingularPsi(CVFRError, ArithmeticError):
    pass


class DependentAttractors(CVFRError, ValueError):
    pass


class NonFiniteState(CVFRError, ArithmeticError):
    """Raised when an integrator produces inf/nan. Carries the step where it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConvergenceFailure(CVFRError, ArithmeticError):
    pass


class NotStationary(UserWarning):
    """Warning: the point handed to the Jacobian is not a stationary state."""


class DivergenceAbort(CVFRError, RuntimeError):
    def __init__(self, message: str, last_finite_loss: float | None = None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class DataError(CVFRError):
    """Malformed input file. Subclasses name the offending path and byte offset."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        detail = message
        if path is not None:
            detail += f" [file={path}"
            if offset is not None:
                detail += f", offset={offset}"
            detail += "]"
        super().__init__(detail)
        self.path = path
        self.offset = offset


class BadMagic(DataError):
    pass


class CountMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CheckpointError(DataError):
    pass
