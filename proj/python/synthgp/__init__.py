"""Multi-output Gaussian process synthetic control."""

from ._core import (
    ConfigError,
    DataError,
    Error,
    MissingArtifactError,
    NumericalError,
    __version__,
    config_hash,
    count_parameters,
    dtw,
    energy_score,
    log_marginal_likelihood,
    log_score,
    lognormal_mean,
    matern,
    mse,
    ou,
    quantile,
    rbf,
    run_stage,
    train_test_split,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "MissingArtifactError",
    "NumericalError",
    "__version__",
    "config_hash",
    "count_parameters",
    "dtw",
    "energy_score",
    "log_marginal_likelihood",
    "log_score",
    "lognormal_mean",
    "matern",
    "mse",
    "ou",
    "quantile",
    "rbf",
    "run_stage",
    "train_test_split",
]
