"""U-Net, Attention U-Net, Advanced and Full Attention U-Net for crack segmentation."""

from ._core import (
    VARIANTS,
    ContractError,
    FormatError,
    Network,
    NumericError,
    ShapeError,
    augment_flips,
    bce_with_logits,
    iou,
    miou,
    synth_crack,
    train,
)

__all__ = [
    "VARIANTS",
    "ContractError",
    "FormatError",
    "Network",
    "NumericError",
    "ShapeError",
    "augment_flips",
    "bce_with_logits",
    "iou",
    "miou",
    "synth_crack",
    "train",
]
