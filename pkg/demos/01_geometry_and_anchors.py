"""Boxes, IoU, regression encoding, and the anchor grid.

Run: python3 demos/01_geometry_and_anchors.py
"""

import numpy as np

from igtrack.anchors import AnchorSpec, assign_anchor_labels, generate_anchors
from igtrack.geometry import Box, RegressionDelta, decode, encode, iou, iou_gradient

print("== Boxes and IoU ==")
a = Box.from_corners(0, 0, 2, 2)
b = Box.from_corners(1, 1, 3, 3)
print(f"a = {a}")
print(f"b = {b}")
print(f"iou(a, b) = {iou(a, b):.6f}  (intersection 1, union 7)")
print(f"iou gradient wrt a: {np.round(iou_gradient(a, b), 4)}")

print("\n== Regression encoding (anchor-relative, log-size) ==")
anchor = Box(64, 64, 32, 32)
target = Box(72, 64, 64, 32)
delta = encode(anchor, target)
print(f"encode({anchor} -> {target})")
print(f"  = (dx {delta.dx:.3f}, dy {delta.dy:.3f}, dw {delta.dw:.3f}, dh {delta.dh:.3f})")
back = decode(anchor, delta)
print(f"decode round-trip: {back}")

print("\n== Anchor grid over the 17x17 response map ==")
grid = generate_anchors(AnchorSpec(), search_size=255)
print(f"{len(grid)} anchors = 5 ratios x 17 x 17 cells, stride 8")
print(f"first anchor:  {np.round(grid.boxes[0], 2)}")
print(f"center ratio-1 anchor: {np.round(grid.boxes[2 * 289 + 8 * 17 + 8], 2)}")
areas = grid.boxes[:, 2] * grid.boxes[:, 3]
print(f"all areas equal: {np.allclose(areas, 64 ** 2)}")

print("\n== Label assignment for a centered ground-truth box ==")
gt = Box(127.5, 127.5, 64, 64)
labels = assign_anchor_labels(grid, gt, seed=0)
print(f"positives: {len(labels.positive_indices)}, negatives: {len(labels.negative_indices)}")
i = int(labels.positive_indices[0])
print(f"a positive anchor decodes exactly to gt: "
      f"{decode(grid.box(i), RegressionDelta(*labels.target[i]))}")
