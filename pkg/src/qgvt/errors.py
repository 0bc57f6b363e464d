"""Exception hierarchy shared by every qgvt module."""


class QgvtError(Exception):
    pass


class ShapeError(QgvtError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(QgvtError, ValueError):
    """An argument or input file violates a documented precondition."""


class FormatError(QgvtError):
    """A file is not a valid QGVT archive or PPM image."""


class CorruptionError(FormatError):
    """The header is readable but its payload description does not fit the file."""


class NumericError(QgvtError, ArithmeticError):
    """A kernel produced a non-finite value."""
