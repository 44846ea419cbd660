"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see cli.EXIT_CODES).
"""


class IsofuseError(Exception):
    """Base class for all package errors."""


class ConfigError(IsofuseError):
    """Invalid configuration or incompatible option combination."""


class DataError(IsofuseError):
    """Unreadable, malformed, or geometrically incompatible input data."""


class NumericalError(IsofuseError):
    """Numerical failure during optimization (NaN gradients, degenerate losses)."""


class UsageError(IsofuseError):
    """API misuse, e.g. backward before a forward pass was recorded."""
