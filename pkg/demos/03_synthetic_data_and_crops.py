"""Synthetic sequence generation and the template/search cropping pipeline.

Run: python3 demos/03_synthetic_data_and_crops.py
"""

import tempfile
from pathlib import Path

import numpy as np

from igtrack import data as D
from igtrack.geometry import iou

root = Path(tempfile.mkdtemp()) / "demo_data"
print(f"== Generating 2 sequences x 8 frames into {root} ==")
D.gen_synthetic(root, n_sequences=2, n_frames=8, motion="constant-velocity",
                scale_drift=1.01, clutter=3, seed=42)
for d in D.list_sequences(root):
    seq = D.load_sequence(d)
    print(f"{seq.id}: {len(seq.frames)} frames of {seq.frames[0].shape}, "
          f"target starts at {seq.gt[0]}")

seq = D.load_sequence(D.list_sequences(root)[0])
print("\n== Ground-truth motion (constant velocity, reflecting) ==")
for t, b in enumerate(seq.gt[:5]):
    print(f"  frame {t}: center ({b.cx:7.2f}, {b.cy:7.2f})  size "
          f"({b.w:.2f} x {b.h:.2f})")

print("\n== Template (127) and search (255) crops ==")
template, tscale = D.crop_template(seq.frames[0], seq.gt[0])
search, sscale = D.crop_search(seq.frames[1], seq.gt[0])
print(f"template: {template.shape}, values in [{template.min():.3f}, {template.max():.3f}]")
print(f"search:   {search.shape}, same scale as template: {np.isclose(tscale, sscale)}")

side, scale = D.search_geometry(seq.gt[0])
in_search = D.box_to_crop(seq.gt[1], seq.gt[0], side, scale)
print(f"frame-1 gt mapped into the search crop: {in_search}")
back = D.box_to_frame(in_search, seq.gt[0], side, scale)
print(f"and back to frame coordinates exactly: iou = {iou(back, seq.gt[1]):.12f}")

pair = D.make_pair(seq, 0, 2)
print(f"\ntraining pair (gap {pair.frame_gap}): previous box sits at the "
      f"search center ({pair.prev_in_search.cx}, {pair.prev_in_search.cy})")
