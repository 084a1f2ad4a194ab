"""SoH estimation from raw battery discharge cycles.

Thin wrapper over the C++ core; see the package README for the CLI and the
canonical cycle-file format.
"""

from tidsit._core import (
    ConfigError,
    DataError,
    IoError,
    NumericError,
    compute_soh,
    default_config,
    evaluate,
    gradcheck,
    predict,
    rmse,
    rmse_percent,
    synth,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "IoError",
    "NumericError",
    "compute_soh",
    "default_config",
    "evaluate",
    "gradcheck",
    "predict",
    "rmse",
    "rmse_percent",
    "synth",
    "train",
]
