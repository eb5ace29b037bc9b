"""Exception hierarchy shared by all modules."""


class KLGaussError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(KLGaussError, ValueError):
    """Bad sizes, mismatched dimensions or out-of-range arguments."""


class NotTraceClassError(InvalidArgumentError):
    """The requested reference covariance is not trace class."""


class NotPositiveError(KLGaussError):
    """A precision operator failed the strict positivity requirement."""


class InfiniteDivergenceError(KLGaussError):
    """A divergence needed for a finite identity is infinite."""


class ResolutionError(KLGaussError):
    """A grid function is too narrow for the quadrature grid."""


class UnsupportedMethodError(KLGaussError):
    """The requested evaluation method does not apply to this potential."""
