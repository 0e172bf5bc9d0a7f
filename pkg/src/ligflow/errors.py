"""Exception types shared across the package."""


class LigflowError(Exception):
    """Base class for all package errors."""


class ContractError(LigflowError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Array shapes are incompatible."""


class NumericError(LigflowError, ArithmeticError):
    """A computation produced a non-finite value."""


class FormatError(LigflowError, ValueError):
    """Malformed serialized input (vector layout, XYZ text, record line)."""

    def __init__(self, message, line=None, kind=None):
        self.line = line
        self.kind = kind
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(LigflowError, ValueError):
    """A feature value falls outside its schema block."""


class DataError(FormatError):
    """A dataset record failed to parse or validate."""
