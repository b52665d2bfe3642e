"""Python bindings for the high-order Paired-ASPP segmentation core."""

from ._hopa import (
    ConfigError,
    DegenerateBatchError,
    HighOrder,
    SegmentationModel,
    ValidationError,
    bilinear_resize,
    conv2d,
    cross_entropy,
    gen_synthetic,
    miou,
    poly_lr,
    run_cli,
    scale_coverage,
    softmax,
)

__all__ = [
    "ConfigError",
    "DegenerateBatchError",
    "HighOrder",
    "SegmentationModel",
    "ValidationError",
    "bilinear_resize",
    "conv2d",
    "cross_entropy",
    "gen_synthetic",
    "miou",
    "poly_lr",
    "run_cli",
    "scale_coverage",
    "softmax",
]
