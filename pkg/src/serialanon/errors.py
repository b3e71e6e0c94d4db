"""Exception types raised across the package."""

from __future__ import annotations


class SerialAnonError(Exception):
    """Base class for all package errors."""


class MalformedEntryError(SerialAnonError, ValueError):
    """A history entry violates 1 <= n_s <= n."""


class InfeasibleRatioError(SerialAnonError, ValueError):
    """No finite group-size ratio keeps the next linked release within 1/ell."""


class HorizonExceededError(SerialAnonError, ValueError):
    """The constant-ratio strategy was asked to plan past its k' horizon."""


class BudgetExceededError(SerialAnonError, RuntimeError):
    """Exhaustive enumeration would exceed the configured world budget."""


class ReleaseOrderError(SerialAnonError, ValueError):
    """A release index does not follow the releases already recorded."""


class FormatError(SerialAnonError, ValueError):
    """An input file does not conform to its expected layout."""
