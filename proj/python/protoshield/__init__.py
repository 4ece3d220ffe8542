"""Prototype-conformity adversarial robustness workbench."""

from ._core import (
    ConfigError,
    Dataset,
    FormatError,
    Model,
    __version__,
    blas_backend,
    config_hash_hex,
    cross_entropy_value,
    load_dataset,
    load_idx,
    load_model,
    prototype_conformity_value,
    save_dataset,
    synth_blobs,
    synth_digits,
    train_model,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "FormatError",
    "Model",
    "__version__",
    "blas_backend",
    "config_hash_hex",
    "cross_entropy_value",
    "load_dataset",
    "load_idx",
    "load_model",
    "prototype_conformity_value",
    "save_dataset",
    "synth_blobs",
    "synth_digits",
    "train_model",
]
