"""Trajectory-plus-flatness generalization bounds for SGD."""

from .errors import (ConfigError, DataError, DivergenceError, EmptyDataset, GenboundError, InsufficientTrace,
                     InvalidArgument, NumericFailure, ParseError, SchemaError, UnsupportedModel)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DivergenceError", "EmptyDataset", "GenboundError", "InsufficientTrace",
           "InvalidArgument", "NumericFailure", "ParseError", "SchemaError", "UnsupportedModel", "__version__"]
