"""Axis-aligned bounding box arithmetic.

Boxes are kept in center form (cx, cy, w, h); corner form exists only as a
conversion so width/height can never go negative by accident.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# decode() clamps log-ratio deltas to this magnitude to avoid exp overflow
# from untrained regression heads.
DELTA_CLAMP = 4.0


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float) -> "Box":
        return Box((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @staticmethod
    def from_xywh(x1: float, y1: float, w: float, h: float) -> "Box":
        return Box(x1 + w / 2, y1 + h / 2, w, h)

    def shifted(self, tx: float, ty: float) -> "Box":
        return Box(self.cx + tx, self.cy + ty, self.w, self.h)


@dataclass(frozen=True)
class RegressionDelta:
    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self):
        for v in (self.dx, self.dy, self.dw, self.dh):
            if not math.isfinite(v):
                raise ValueError("regression delta components must be finite")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint, symmetric."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_gradient(a: Box, b: Box) -> tuple[float, float, float, float]:
    """Analytic gradient of iou(a, b) w.r.t. (a.cx, a.cy, a.w, a.h).

    Returns the zero subgradient on disjoint/tangent configurations (the
    true function is flat there).
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return (0.0, 0.0, 0.0, 0.0)
    inter = iw * ih
    union = a.area + b.area - inter

    # d(inter)/d(corner) with strict-inequality subgradient at ties
    di_dx1 = -ih if a.x1 > b.x1 else 0.0
    di_dx2 = ih if a.x2 < b.x2 else 0.0
    di_dy1 = -iw if a.y1 > b.y1 else 0.0
    di_dy2 = iw if a.y2 < b.y2 else 0.0

    di_dcx = di_dx1 + di_dx2
    di_dcy = di_dy1 + di_dy2
    di_dw = 0.5 * (di_dx2 - di_dx1)
    di_dh = 0.5 * (di_dy2 - di_dy1)

    # d(area_a)/dw = h, /dh = w; union = area_a + area_b - inter
    da_dw = a.h
    da_dh = a.w

    def grad(di, da):
        # d(I/U) = (dI*U - I*dU)/U^2, dU = da - dI
        return (di * union - inter * (da - di)) / (union * union)

    return (
        grad(di_dcx, 0.0),
        grad(di_dcy, 0.0),
        grad(di_dw, da_dw),
        grad(di_dh, da_dh),
    )


def encode(anchor: Box, target: Box) -> RegressionDelta:
    """Express target relative to anchor in the transformed regression domain."""
    return RegressionDelta(
        dx=(target.cx - anchor.cx) / anchor.w,
        dy=(target.cy - anchor.cy) / anchor.h,
        dw=math.log(target.w / anchor.w),
        dh=math.log(target.h / anchor.h),
    )


def decode(anchor: Box, delta: RegressionDelta) -> Box:
    """Inverse of encode. Log-ratio components are clamped to |d| <= 4."""
    dw = min(max(delta.dw, -DELTA_CLAMP), DELTA_CLAMP)
    dh = min(max(delta.dh, -DELTA_CLAMP), DELTA_CLAMP)
    return Box(
        cx=anchor.cx + delta.dx * anchor.w,
        cy=anchor.cy + delta.dy * anchor.h,
        w=anchor.w * math.exp(dw),
        h=anchor.h * math.exp(dh),
    )


def clip_box(b: Box, width: float, height: float) -> Box:
    """Clip a box into [0, width] x [0, height], keeping sides >= 1 px.

    A box entirely outside the image collapses to a 1x1 box at the nearest
    boundary point.
    """
    if not (width > 0 and height > 0):
        raise ValueError("image dimensions must be positive")
    if b.x2 <= 0 or b.x1 >= width or b.y2 <= 0 or b.y1 >= height:
        # no overlap with the image at all: 1x1 at the nearest boundary point
        cx = min(max(b.cx, 0.5), width - 0.5)
        cy = min(max(b.cy, 0.5), height - 0.5)
        return Box(cx, cy, 1.0, 1.0)
    x1 = max(b.x1, 0.0)
    y1 = max(b.y1, 0.0)
    x2 = min(b.x2, width)
    y2 = min(b.y2, height)
    if x2 - x1 < 1.0:
        # degenerate after clipping: 1 px wide at the nearest feasible spot
        cx = min(max((x1 + x2) / 2, 0.5), width - 0.5)
        x1, x2 = cx - 0.5, cx + 0.5
    if y2 - y1 < 1.0:
        cy = min(max((y1 + y2) / 2, 0.5), height - 0.5)
        y1, y2 = cy - 0.5, cy + 0.5
    return Box.from_corners(x1, y1, x2, y2)
