"""Retinal artery/vein segmentation with recursive refinement.

Arrays are planar float32 ``[C, H, W]`` maps (artery, vein, vessel) unless
stated otherwise; ground-truth colour images are ``[H, W, 3]`` uint8.
"""

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    Model,
    NumericFailure,
    ShapeError,
    __version__,
    av_accuracy,
    decode_gt,
    encode_gt,
    evaluate,
    iteration_weights,
    load_dataset,
    parse_train_config,
    pr_auc,
    roc_auc,
    synth_sample,
    train,
    wilcoxon_greater,
    write_synthetic_dataset,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Model",
    "NumericFailure",
    "ShapeError",
    "__version__",
    "av_accuracy",
    "decode_gt",
    "encode_gt",
    "evaluate",
    "iteration_weights",
    "load_dataset",
    "parse_train_config",
    "pr_auc",
    "roc_auc",
    "synth_sample",
    "train",
    "wilcoxon_greater",
    "write_synthetic_dataset",
]
