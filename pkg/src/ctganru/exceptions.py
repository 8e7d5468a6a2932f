"""Exception hierarchy.

Configuration/data faults and numerical failures are kept apart so the CLI
can map them onto distinct exit codes.
"""


class CtganRuError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CtganRuError, ValueError):
    """Bad input: malformed schema, missing column, infeasible target, ..."""


class SchemaError(ConfigError):
    pass


class DataError(ConfigError):
    """A data file does not conform to its schema.

    ``row`` is 1-based and counts the header as row 1, matching what a
    spreadsheet shows.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(CtganRuError, ArithmeticError):
    """The computation ran but produced an unusable result."""


class SeparationError(NumericalError):
    def __init__(self, message, coefficient=None):
        self.coefficient = coefficient
        super().__init__(message)


class SingularInformationError(NumericalError):
    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class ConvergenceError(NumericalError):
    pass


class NonFiniteError(NumericalError):
    """Non-finite loss or gradient; ``where`` names the epoch/step or layer."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(message if where is None else f"{message} at {where}")
