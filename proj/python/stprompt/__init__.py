"""Python bindings for the stprompt spatio-temporal prompt-tuning core."""

from ._stprompt import (
    ConfigError,
    DataError,
    Dataset,
    IoError,
    NumericError,
    ShapeError,
    eigh_jacobi,
    evaluate,
    gen_synth,
    load_dataset,
    metrics,
    normalized_laplacian,
    pca2,
    pretrain,
    prompt_embeddings,
    prompt_tune,
    spatial_context,
    uniformity_loss,
    uniformity_stats,
    unit_circle,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "IoError",
    "NumericError",
    "ShapeError",
    "eigh_jacobi",
    "evaluate",
    "gen_synth",
    "load_dataset",
    "metrics",
    "normalized_laplacian",
    "pca2",
    "pretrain",
    "prompt_embeddings",
    "prompt_tune",
    "spatial_context",
    "uniformity_loss",
    "uniformity_stats",
    "unit_circle",
]
