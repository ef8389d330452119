"""Exception hierarchy shared by every module.

CLI exit codes are derived from the class: configuration problems map to 2,
data problems to 3, numeric failures to 4.
"""


class NeuclickError(Exception):
    exit_code = 1


class ConfigurationError(NeuclickError, ValueError):
    exit_code = 2


class UnsupportedDatasetError(ConfigurationError):
    """A model was paired with data it cannot consume (e.g. RANCM without click order)."""


class DimensionError(NeuclickError, ValueError):
    exit_code = 2


class DataError(NeuclickError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CatalogError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptyBatchError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericError(NeuclickError, ArithmeticError):
    exit_code = 4
