"""The IoU-guided proposal selection walkthrough: top-K by score, motion
estimate, IoU response, soft vs hard selection, and the 1 - IoU loss.

Run: python3 demos/04_iou_module.py
"""

import numpy as np

from igtrack import iou_module as M
from igtrack.anchors import AnchorSpec, generate_anchors
from igtrack.geometry import Box
from igtrack.net import NetConfig, init_params, make_tape

cfg = NetConfig()
grid = generate_anchors(AnchorSpec(), cfg.search_size)
rng = np.random.default_rng(0)

print("== Synthetic head outputs ==")
cls = rng.normal(size=(10, 17, 17))
reg = rng.normal(scale=0.2, size=(20, 17, 17))
proposals = M.select_topk(cls, reg, grid, K=5, search_size=255)
print("top-5 proposals (score-sorted):")
for i in range(5):
    b = proposals.boxes[i]
    print(f"  score {proposals.scores[i]:.3f}  box ({b[0]:6.1f}, {b[1]:6.1f}, "
          f"{b[2]:5.1f} x {b[3]:5.1f})  anchor #{proposals.source_index[i]}")

print("\n== Motion estimate (zero-initialized block = constant velocity) ==")
tape = make_tape(cfg, init_params(cfg, seed=0))
state = M.MotionState(prev_box=Box(120, 130, 60, 60), velocity=(6.0, -4.0))
est = M.motion_estimate(tape, state)
print(f"previous {state.prev_box} + velocity {state.velocity} -> {est}")

print("\n== IoU response and selection ==")
response = M.iou_response(est, proposals)
print(f"response values: {np.round(response.values, 3)}")
hard = M.predict_box(response, proposals, state.prev_box, alpha=0.3)
soft = M.predict_box(response, proposals, state.prev_box, alpha=0.3,
                     train_mode=True, beta=10.0)
print(f"hard (inference) pick: {hard}")
print(f"soft (training)  pick: {soft}")

gt = Box(est.cx + 5, est.cy - 3, 58, 62)
print(f"\niou_loss(hard pick, gt) = {M.iou_loss(hard, gt):.4f}  (1 - IoU)")
