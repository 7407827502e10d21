"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid hyperparameters or experiment settings."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class UsageError(ValueError):
    """An operation was called with arguments it cannot act on (e.g. empty input)."""
