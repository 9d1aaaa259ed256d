"""Mean-shift distillation on 2D toy distributions."""

from ._core import (
    ConfigError,
    FormatError,
    IdealDenoiser,
    LearnedDenoiser,
    Mixture,
    NumericalError,
    __version__,
    config_keys,
    config_text,
    fractal,
    git_blob_sha1,
    mean_shift,
    mixture_from_config,
    mmd,
    nll,
    pinwheel,
    precision_recall,
    read_mixture_csv,
    run,
    sample,
    spiral,
)
from . import datasets, weights

__all__ = [
    "ConfigError",
    "FormatError",
    "IdealDenoiser",
    "LearnedDenoiser",
    "Mixture",
    "NumericalError",
    "__version__",
    "config_keys",
    "config_text",
    "datasets",
    "fractal",
    "git_blob_sha1",
    "mean_shift",
    "mixture_from_config",
    "mmd",
    "nll",
    "pinwheel",
    "precision_recall",
    "read_mixture_csv",
    "run",
    "sample",
    "spiral",
    "weights",
]
