"""Exception hierarchy shared by all estimators.

The CLI maps these to exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class CellwiseError(Exception):
    pass


class ConfigError(CellwiseError, ValueError):
    pass


class DataError(CellwiseError, ValueError):
    pass


class CsvStructureError(DataError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class CsvParseError(DataError):
    def __init__(self, row, column, field):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column}: cannot parse {field!r} as a number")


class InsufficientDataError(DataError):
    def __init__(self, column, message):
        self.column = column
        super().__init__(f"column {column!r}: {message}")


class DegenerateScaleError(DataError):
    def __init__(self, column, message="robust scale is zero"):
        self.column = column
        super().__init__(f"column {column!r}: {message}")


class NumericalError(CellwiseError, ArithmeticError):
    pass


class ZeroScaleError(NumericalError):
    pass
