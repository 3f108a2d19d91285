"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "BayesDwdError",
    "ConfigError",
    "ConvergenceError",
    "DataFormatError",
    "NumericalError",
    "ResourceBudgetError",
]


class BayesDwdError(Exception):
    """Base class for errors raised by this package."""


class ConvergenceError(BayesDwdError):
    """An iterative routine exhausted its budget without converging.

    The best iterate seen so far is attached as ``best`` so callers can
    inspect it or restart from it.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class NumericalError(BayesDwdError):
    """A computation produced values outside its numerical contract."""


class ResourceBudgetError(BayesDwdError):
    """The requested amount of work exceeds a configured budget."""


class ConfigError(BayesDwdError):
    """User-supplied configuration is inconsistent or malformed."""


class DataFormatError(BayesDwdError):
    """An input file violates the documented data format."""
