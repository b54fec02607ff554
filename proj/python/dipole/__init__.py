"""Python bindings for the dipole next-visit prediction library."""

from ._dipole import (
    VARIANTS,
    ConfigError,
    DataError,
    Dataset,
    DimensionError,
    Model,
    TrainingDiverged,
    UnsupportedVariant,
    generate,
    gradcheck,
    load_corpus,
    run_cli,
    split,
    train,
)

__all__ = [
    "VARIANTS",
    "ConfigError",
    "DataError",
    "Dataset",
    "DimensionError",
    "Model",
    "TrainingDiverged",
    "UnsupportedVariant",
    "generate",
    "gradcheck",
    "load_corpus",
    "run_cli",
    "split",
    "train",
]
