"""Datasets, IDX ingestion, binarization, checkpoints and metrics files."""

from .checkpoint import (
    Checkpoint,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .datasets import (
    Dataset,
    IdxDimensionError,
    IdxError,
    IdxMagicError,
    IdxTruncatedError,
    binarize,
    load_idx,
    make_linear_gaussian_synthetic,
    make_toy_four_points,
    parse_idx,
)
from .metrics import read_metrics, write_metrics

__all__ = [
    "Checkpoint",
    "CheckpointChecksumError",
    "CheckpointError",
    "CheckpointVersionError",
    "Dataset",
    "IdxDimensionError",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "binarize",
    "load_checkpoint",
    "load_idx",
    "make_linear_gaussian_synthetic",
    "make_toy_four_points",
    "parse_idx",
    "read_metrics",
    "save_checkpoint",
    "write_metrics",
]
