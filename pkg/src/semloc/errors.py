"""Exception types shared across the package."""


class SemlocError(Exception):
    """Base class for all package errors."""


class FormatError(SemlocError, ValueError):
    """A file or stream does not conform to its declared format.

    ``position`` is a byte offset for binary formats and a 1-based line
    number for text formats.
    """

    def __init__(self, message, position=None, unit="byte"):
        self.position = position
        self.unit = unit
        if position is not None:
            message = f"{message} (at {unit} {position})"
        super().__init__(message)


class NumericError(SemlocError, ArithmeticError):
    """A numerical computation produced an unusable result."""


class DegenerateNormError(NumericError):
    """The projected descriptor is too short to normalize."""
