"""Exception types shared across the package."""


class Vol32Error(Exception):
    """Base class for all package errors."""


class DomainError(Vol32Error, ValueError):
    """An argument lies outside the domain of an operation."""


class MartingaleError(DomainError):
    """Parameters violate the martingale condition kappa - eps*rho >= -eps^2/2."""


class ConvergenceError(Vol32Error, ArithmeticError):
    """A numerical procedure failed to reach its tolerance.

    The best available estimate is kept on the exception so callers can
    decide whether it is usable.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class AccuracyWarning(UserWarning):
    """A self-check suggests a result may be less accurate than requested."""
