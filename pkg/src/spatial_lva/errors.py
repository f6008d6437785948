"""Exception types shared across the package."""


class SpatialLVAError(Exception):
    """Base class for all package errors."""


class ValidationError(SpatialLVAError, ValueError):
    """Input violates a documented precondition (bad shape, ids, bounds...)."""


class DegenerateInputError(SpatialLVAError, ValueError):
    """Input is formally valid but carries no usable signal (zero norm, flat curve...)."""


class NumericalError(SpatialLVAError, RuntimeError):
    """A numerical operation failed (ill-conditioned solve, non-PD covariance...).

    ``condition_estimate`` carries the offending condition number when one
    was computed.
    """

    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate
