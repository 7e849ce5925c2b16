"""Exception types shared across the package."""


class SoftlocoError(Exception):
    """Base class for all package errors."""


class DomainError(SoftlocoError, ValueError):
    """An operand's real part lies outside the real function's domain."""


class FeasibilityError(SoftlocoError):
    """A contact distance became non-positive (broken step cap)."""


class ConvergenceError(SoftlocoError):
    """An iterative solve ran out of iterations.

    Carries the residual history so callers can report or recover.
    """

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class SingularSystemError(SoftlocoError):
    """A linear system could not be factorized (even after shifting)."""


class TapeBudgetError(SoftlocoError):
    """Recording exceeded the configured node budget."""


class ConfigError(SoftlocoError, ValueError):
    """A scenario configuration failed validation."""
