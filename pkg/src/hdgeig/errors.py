"""Exception types shared across the package."""


class HdgError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HdgError, ValueError):
    """Invalid or incompatible discretization configuration."""


class NumericalError(HdgError, RuntimeError):
    """A solver or factorization failed numerically."""


class LocalSolveError(NumericalError):
    """An element-local system could not be solved."""


class EigenSolveError(NumericalError):
    """A global eigenvalue solve failed."""


class ConvergenceError(EigenSolveError):
    """Iteration budget exceeded; carries the iterate history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class UnsupportedModeError(HdgError, ValueError):
    """Requested a quantity that is undefined for the given eigenmode."""
