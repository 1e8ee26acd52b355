"""Exception types shared across the package."""


class EstimationError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteError(EstimationError):
    """Input contains NaN or Inf entries."""


class ConvergenceFailureError(EstimationError):
    """An iterative numerical routine (e.g. the SVD backend) did not converge."""


class DimensionMismatchError(EstimationError):
    """Operands have incompatible shapes."""


class IndexOutOfRangeError(EstimationError):
    """A rank / index parameter exceeds the admissible range."""


class OutOfRangeError(EstimationError):
    """A scalar argument lies outside its admissible open interval."""


class MaxIterExceededError(EstimationError):
    """Iteration budget exhausted before reaching the requested tolerance."""


class DegenerateFoldsError(EstimationError):
    """A cross-validation fold is empty."""


class DegenerateDenominatorError(EstimationError):
    """The projection-direction denominator is numerically zero."""


class SingularSystemError(EstimationError):
    """A linear system needed for ground-truth computation is singular."""


class NotPositiveDefiniteError(EstimationError):
    """A requested covariance model is not positive definite."""
