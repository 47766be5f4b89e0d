"""Exception hierarchy.

Validation problems derive from ``ValueError`` and numerical failures from
``ArithmeticError`` so the CLI can map them to distinct exit codes.
"""


class DlmmError(Exception):
    """Base class for all package errors."""


class ValidationError(DlmmError, ValueError):
    """Input does not satisfy a precondition."""


class DataError(ValidationError):
    """A problem with a specific row of an input file."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MissingColumnError(DataError):
    pass


class ParseError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class DestructiveViolationError(DataError):
    """An observational unit was observed at more than one time."""


class DesignError(ValidationError):
    """Unknown factor, incomplete grouping or rank-deficient design."""


class UnbalancedError(ValidationError):
    """A balanced-layout formula was applied to unbalanced data."""


class NumericalError(DlmmError, ArithmeticError):
    """Singular system or failed factorization."""
