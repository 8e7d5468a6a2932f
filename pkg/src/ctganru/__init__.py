"""Rebalancing imbalanced tabular data with a conditional tabular GAN,
logit severity models on the rebalanced data, and simulation checks."""

from .ctgan import CTGAN, CtganConfig
from .exceptions import (
    ConfigError,
    ConvergenceError,
    CtganRuError,
    DataError,
    NonFiniteError,
    NumericalError,
    SchemaError,
    SeparationError,
    SingularInformationError,
)
from .glm import BinaryLogit, OrderedLogit, fit_binary_logit, fit_ordered_logit, inference_report
from .resampling import CTGANOverSampler, CTGANRUSampler, RandomUnderSampler, SMOTENC
from .tabular import Column, DataSchema, Dataset, TabularEncoder, load_csv, load_schema, split, write_csv

__version__ = "0.1.0"

__all__ = [
    "BinaryLogit",
    "CTGAN",
    "CTGANOverSampler",
    "CTGANRUSampler",
    "Column",
    "ConfigError",
    "ConvergenceError",
    "CtganConfig",
    "CtganRuError",
    "DataError",
    "DataSchema",
    "Dataset",
    "NonFiniteError",
    "NumericalError",
    "OrderedLogit",
    "RandomUnderSampler",
    "SMOTENC",
    "SchemaError",
    "SeparationError",
    "SingularInformationError",
    "TabularEncoder",
    "fit_binary_logit",
    "fit_ordered_logit",
    "inference_report",
    "load_csv",
    "load_schema",
    "split",
    "write_csv",
]
