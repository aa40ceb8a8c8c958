"""Exception hierarchy shared by all modules."""


class EisError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EisError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UndefinedRegion(EisError):
    """(frequency, |Z|) point lies outside every accuracy-contour region."""


class InsufficientPoints(EisError):
    """Too few spectrum points satisfy the error bounds for a line fit."""


class DegenerateGeometry(EisError):
    """Spectrum geometry does not support a closed-form initialization."""


class PeakDetectionFailure(EisError):
    """Fewer than two separated arcs found in the mid-frequency spectrum."""


class SingularWeight(EisError):
    """A covariance block used as a weight is not positive definite."""


class SingularNormalEquations(EisError):
    """Levenberg-Marquardt damping grew past its ceiling."""
