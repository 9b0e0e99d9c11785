"""Shared exception types."""


class NumericError(ArithmeticError):
    """A computation produced or encountered non-finite values."""


class FormatError(ValueError):
    """An input file does not conform to its declared format."""


class ConsistencyError(ValueError):
    """Inputs that are individually valid contradict each other."""
