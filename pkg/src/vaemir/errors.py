"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``NumericalError`` -> 3.
"""


class VaemirError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(VaemirError, ValueError):
    """Invalid configuration or argument values."""


class ShapeError(VaemirError, ValueError):
    """Array dimensions do not line up."""


class DataError(VaemirError, ValueError):
    """Malformed or inconsistent dataset contents."""


class NumericalError(VaemirError, ArithmeticError):
    """Training produced a non-finite loss or parameter."""
