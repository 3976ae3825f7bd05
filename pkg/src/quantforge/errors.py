"""Exception taxonomy shared across the package.

The CLI maps ConfigError to exit code 2 and NumericalError to exit code 3;
everything else is a plain failure.
"""


class QuantForgeError(Exception):
    """Base class for all package errors."""


class ShapeError(QuantForgeError):
    """Dimension mismatch or invalid array geometry."""


class ConfigError(QuantForgeError):
    """Invalid or inconsistent configuration."""


class NumericalError(QuantForgeError):
    """Numerical degeneracy: failed factorization, non-finite values."""


class DataError(QuantForgeError):
    """Unusable input data (e.g. corpus file too short)."""


class StateError(QuantForgeError):
    """Operation called before its prerequisites were produced."""
