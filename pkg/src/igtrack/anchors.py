"""Dense anchor grid aligned with the correlation response map, plus
training label/target assignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, encode, iou

LABEL_POS = 1
LABEL_NEG = 0
LABEL_IGNORE = -1


@dataclass(frozen=True)
class AnchorSpec:
    stride: int = 8
    ratios: tuple[float, ...] = (1 / 3, 1 / 2, 1.0, 2.0, 3.0)
    base_size: float = 64.0
    response_size: int = 17

    def __post_init__(self):
        if self.stride < 1 or self.base_size < 1 or self.response_size < 1:
            raise ValueError("stride, base_size and response_size must be >= 1")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be non-empty and positive")

    @property
    def num_anchors(self) -> int:
        return len(self.ratios) * self.response_size ** 2


@dataclass(frozen=True)
class AnchorGrid:
    """Anchors in (ratio-major, row, column) order.

    boxes is an (N, 4) float64 array of (cx, cy, w, h).
    """

    boxes: np.ndarray
    spec: AnchorSpec

    def __len__(self) -> int:
        return len(self.boxes)

    def box(self, i: int) -> Box:
        cx, cy, w, h = self.boxes[i]
        return Box(cx, cy, w, h)


@dataclass
class AnchorLabels:
    """label: (N,) int array of {1 pos, 0 neg, -1 ignore};
    target: (N, 4) regression deltas, valid only where label == 1."""

    label: np.ndarray
    target: np.ndarray

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.label == LABEL_POS)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.label == LABEL_NEG)


def generate_anchors(spec: AnchorSpec, search_size: int) -> AnchorGrid:
    """Anchor grid centered on the search image.

    Per ratio r the anchor is base_size*sqrt(r) wide and base_size/sqrt(r)
    tall, so every anchor has area base_size^2.
    """
    r = spec.response_size
    c0 = search_size / 2 - spec.stride * (r - 1) / 2
    centers = c0 + spec.stride * np.arange(r, dtype=np.float64)
    cyy, cxx = np.meshgrid(centers, centers, indexing="ij")

    boxes = np.empty((len(spec.ratios), r, r, 4), dtype=np.float64)
    for k, ratio in enumerate(spec.ratios):
        boxes[k, :, :, 0] = cxx
        boxes[k, :, :, 1] = cyy
        boxes[k, :, :, 2] = spec.base_size * np.sqrt(ratio)
        boxes[k, :, :, 3] = spec.base_size / np.sqrt(ratio)
    return AnchorGrid(boxes=boxes.reshape(-1, 4), spec=spec)


def iou_with_box(boxes: np.ndarray, gt: Box) -> np.ndarray:
    """Vectorized IoU of an (N, 4) center-form array against one box."""
    x1 = boxes[:, 0] - boxes[:, 2] / 2
    y1 = boxes[:, 1] - boxes[:, 3] / 2
    x2 = boxes[:, 0] + boxes[:, 2] / 2
    y2 = boxes[:, 1] + boxes[:, 3] / 2
    iw = np.minimum(x2, gt.x2) - np.maximum(x1, gt.x1)
    ih = np.minimum(y2, gt.y2) - np.maximum(y1, gt.y1)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = boxes[:, 2] * boxes[:, 3] + gt.area - inter
    return inter / union


def assign_anchor_labels(
    grid: AnchorGrid,
    gt: Box,
    hi: float = 0.6,
    lo: float = 0.3,
    max_pos: int = 16,
    max_neg: int = 48,
    seed: int = 0,
) -> AnchorLabels:
    """IoU-threshold label assignment with seeded subsampling.

    Anchors with IoU >= hi are positive, <= lo negative, in between ignored.
    If nothing clears hi the single best-IoU anchor is forced positive, so a
    regression target always exists. Positives/negatives beyond max_pos /
    max_neg are demoted to ignore, chosen deterministically from the seed.
    """
    if not (0 <= lo < hi <= 1):
        raise ValueError("thresholds must satisfy 0 <= lo < hi <= 1")

    overlaps = iou_with_box(grid.boxes, gt)
    label = np.full(len(grid), LABEL_IGNORE, dtype=np.int64)
    label[overlaps <= lo] = LABEL_NEG
    label[overlaps >= hi] = LABEL_POS
    if not (label == LABEL_POS).any():
        best = int(np.argmax(overlaps))
        label[best] = LABEL_POS

    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(label == LABEL_POS)
    if len(pos) > max_pos:
        drop = rng.choice(pos, size=len(pos) - max_pos, replace=False)
        label[drop] = LABEL_IGNORE
    neg = np.flatnonzero(label == LABEL_NEG)
    if len(neg) > max_neg:
        drop = rng.choice(neg, size=len(neg) - max_neg, replace=False)
        label[drop] = LABEL_IGNORE

    target = np.zeros((len(grid), 4), dtype=np.float64)
    for i in np.flatnonzero(label == LABEL_POS):
        d = encode(grid.box(int(i)), gt)
        target[i] = (d.dx, d.dy, d.dw, d.dh)
    return AnchorLabels(label=label, target=target)
