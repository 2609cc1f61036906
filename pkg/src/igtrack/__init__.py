"""IoU-guided Siamese region-proposal tracker (numpy implementation)."""

from .geometry import Box, RegressionDelta, clip_box, decode, encode, iou, iou_gradient

__all__ = [
    "Box",
    "RegressionDelta",
    "iou",
    "iou_gradient",
    "encode",
    "decode",
    "clip_box",
]
