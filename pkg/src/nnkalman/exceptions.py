"""Exception types raised by the estimation stack."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures (non-PSD covariances, singular solves, divergence)."""


class NotPSDError(NumericalError):
    """A covariance matrix is indefinite beyond the repair tolerance."""


class SingularCovarianceError(NumericalError):
    """A linear solve against a covariance block failed even after jitter escalation."""


class DivergenceError(NumericalError):
    """A simulation or optimisation produced non-finite values.

    Parameters
    ----------
    message : str
        Human readable description.
    step : int, optional
        Index of the time step or epoch where the failure was detected.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StepFailure(NumericalError):
    """A numerical failure inside a filter or smoother recursion.

    The original exception is available as ``cause`` (and ``__cause__``),
    the failing time index as ``step``.
    """

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""
