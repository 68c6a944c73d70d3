"""Exception types shared across genbound.

Each class maps to one failure family; the CLI translates them into exit codes.
"""


class GenboundError(Exception):
    exit_code = 1


class InvalidArgument(GenboundError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgument):
    exit_code = 2


class UnsupportedModel(GenboundError, TypeError):
    exit_code = 6


class NumericFailure(GenboundError, ArithmeticError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class DivergenceError(GenboundError):
    exit_code = 4

    def __init__(self, message, step, weights=None):
        super().__init__(message)
        self.step = step
        self.weights = weights


class InsufficientTrace(GenboundError):
    exit_code = 5


class DataError(GenboundError, IOError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EmptyDataset(DataError):
    pass
