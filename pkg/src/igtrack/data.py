"""Synthetic sequences, the on-disk PPM+CSV format, and the template/search
cropping pipeline.

On disk a dataset is one directory per sequence holding %06d.ppm frames
(binary P6) and a header-free groundtruth.csv of
`frame_index,x1,y1,w,h` lines (corner + size, pixels). Prediction files use
the same CSV schema.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Box

TEMPLATE_SIZE = 127
SEARCH_SIZE = 255

MOTION_KINDS = ("constant-velocity", "sinusoidal", "random-walk")


# -- PPM + CSV ------------------------------------------------------------


def write_ppm(path, img: np.ndarray):
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    # header: magic, width, height, maxval, then a single whitespace byte
    fields = []
    i = 2
    while len(fields) < 3:
        while raw[i : i + 1].isspace():
            i += 1
        if raw[i : i + 1] == b"#":
            while raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while not raw[j : j + 1].isspace():
            j += 1
        fields.append(int(raw[i:j]))
        i = j
    i += 1
    w, h, _maxval = fields
    return np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=i).reshape(h, w, 3).copy()


def write_groundtruth(path, boxes: list[Box]):
    with open(path, "w") as f:
        for i, b in enumerate(boxes):
            f.write(f"{i},{b.x1:.4f},{b.y1:.4f},{b.w:.4f},{b.h:.4f}\n")


def read_groundtruth(path) -> list[Box]:
    boxes = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            _idx, x1, y1, w, h = line.split(",")
            boxes.append(Box.from_xywh(float(x1), float(y1), float(w), float(h)))
    return boxes


@dataclass
class SequenceRecord:
    frames: list[np.ndarray]
    gt: list[Box]
    id: str

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")


def load_sequence(seq_dir) -> SequenceRecord:
    seq_dir = Path(seq_dir)
    gt = read_groundtruth(seq_dir / "groundtruth.csv")
    frames = [read_ppm(seq_dir / f"{i:06d}.ppm") for i in range(len(gt))]
    return SequenceRecord(frames=frames, gt=gt, id=seq_dir.name)


def list_sequences(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if (p / "groundtruth.csv").exists())


# -- synthetic generation -------------------------------------------------


def _texture(rng, h, w, base_color, contrast=60):
    """Coarse random grid upsampled to size: cheap, matchable texture."""
    coarse = rng.integers(-contrast, contrast + 1, size=(max(h // 8, 2), max(w // 8, 2), 3))
    ys = (np.arange(h) * coarse.shape[0] // h).astype(int)
    xs = (np.arange(w) * coarse.shape[1] // w).astype(int)
    tex = base_color[None, None, :] + coarse[ys][:, xs]
    return np.clip(tex, 0, 255).astype(np.uint8)


def _paste_texture(frame, tex, box: Box):
    """Render a texture tile into a box region by nearest resampling, so the
    target's appearance is stable under scale changes."""
    h, w = frame.shape[:2]
    x1 = int(round(box.x1))
    y1 = int(round(box.y1))
    x2 = int(round(box.x2))
    y2 = int(round(box.y2))
    x1c, y1c = max(x1, 0), max(y1, 0)
    x2c, y2c = min(x2, w), min(y2, h)
    if x2c <= x1c or y2c <= y1c:
        return
    th, tw = tex.shape[:2]
    ys = ((np.arange(y1c, y2c) - y1) * th // max(y2 - y1, 1)).clip(0, th - 1)
    xs = ((np.arange(x1c, x2c) - x1) * tw // max(x2 - x1, 1)).clip(0, tw - 1)
    frame[y1c:y2c, x1c:x2c] = tex[ys[:, None], xs[None, :]]


def _reflect(pos, vel, lo, hi):
    """One step of reflective motion for a scalar coordinate."""
    pos = pos + vel
    if pos < lo:
        pos = 2 * lo - pos
        vel = -vel
    elif pos > hi:
        pos = 2 * hi - pos
        vel = -vel
    return pos, vel


def gen_synthetic(
    out_dir,
    n_sequences: int,
    n_frames: int,
    image_size: int = 320,
    motion: str = "constant-velocity",
    scale_drift: float = 1.0,
    clutter: int = 3,
    seed: int = 0,
):
    """Write a deterministic synthetic dataset: textured rectangle target
    over a textured background with moving distractors; ground truth exact
    by construction, motion reflecting at frame borders."""
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    if image_size < 320:
        raise ValueError("image_size must be >= 320")
    if motion not in MOTION_KINDS:
        raise ValueError(f"motion must be one of {MOTION_KINDS}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_sequences)
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)
        _gen_sequence(out_dir / f"seq{s:04d}", rng, n_frames, image_size, motion, scale_drift, clutter)


def _gen_sequence(seq_dir, rng, n_frames, image_size, motion, scale_drift, clutter):
    w0 = float(rng.uniform(45, 80))
    aspect = float(rng.uniform(0.6, 1.6))
    h0 = w0 / aspect
    max_side = max(w0, h0) * scale_drift ** max(n_frames - 1, 0)
    if max_side >= image_size:
        raise ValueError("infeasible config: target outgrows the frame")

    margin_x = w0 * scale_drift ** n_frames / 2 + 2
    margin_y = h0 * scale_drift ** n_frames / 2 + 2
    cx = float(rng.uniform(margin_x, image_size - margin_x))
    cy = float(rng.uniform(margin_y, image_size - margin_y))
    vx = float(rng.uniform(-5, 5))
    vy = float(rng.uniform(-5, 5))
    amp = float(rng.uniform(20, 60))
    omega = float(rng.uniform(0.1, 0.4))
    phase = float(rng.uniform(0, 2 * np.pi))

    bg_color = rng.integers(40, 120, size=3)
    bg = _texture(rng, image_size, image_size, bg_color, contrast=30)
    target_color = rng.integers(140, 240, size=3)
    target_tex = _texture(rng, 48, 48, target_color, contrast=50)

    dist = []
    for _ in range(clutter):
        dw = float(rng.uniform(20, 70))
        dh = float(rng.uniform(20, 70))
        dist.append(
            {
                "cx": float(rng.uniform(dw / 2, image_size - dw / 2)),
                "cy": float(rng.uniform(dh / 2, image_size - dh / 2)),
                "vx": float(rng.uniform(-4, 4)),
                "vy": float(rng.uniform(-4, 4)),
                "w": dw,
                "h": dh,
                "tex": _texture(rng, 32, 32, rng.integers(60, 200, size=3), contrast=40),
            }
        )

    seq_dir.mkdir(parents=True, exist_ok=True)
    gt: list[Box] = []
    w, h = w0, h0
    cx0, cy0 = cx, cy
    for t in range(n_frames):
        frame = bg.copy()
        for d in dist:
            _paste_texture(frame, d["tex"], Box(d["cx"], d["cy"], d["w"], d["h"]))
            d["cx"], d["vx"] = _reflect(d["cx"], d["vx"], d["w"] / 2, image_size - d["w"] / 2)
            d["cy"], d["vy"] = _reflect(d["cy"], d["vy"], d["h"] / 2, image_size - d["h"] / 2)

        box = Box(cx, cy, w, h)
        _paste_texture(frame, target_tex, box)
        gt.append(box)
        write_ppm(seq_dir / f"{t:06d}.ppm", frame)

        # advance target state
        if motion == "constant-velocity":
            cx, vx = _reflect(cx, vx, w / 2, image_size - w / 2)
            cy, vy = _reflect(cy, vy, h / 2, image_size - h / 2)
        elif motion == "sinusoidal":
            cx = cx0 + amp * np.sin(omega * (t + 1) + phase)
            cy = cy0 + amp * np.sin(0.7 * omega * (t + 1) + 2 * phase)
            cx = min(max(cx, w / 2), image_size - w / 2)
            cy = min(max(cy, h / 2), image_size - h / 2)
        else:  # random-walk
            vx = float(np.clip(vx + rng.uniform(-1.5, 1.5), -6, 6))
            vy = float(np.clip(vy + rng.uniform(-1.5, 1.5), -6, 6))
            cx, vx = _reflect(cx, vx, w / 2, image_size - w / 2)
            cy, vy = _reflect(cy, vy, h / 2, image_size - h / 2)
        w *= scale_drift
        h *= scale_drift

    write_groundtruth(seq_dir / "groundtruth.csv", gt)


# -- cropping -------------------------------------------------------------


def context_side(box: Box) -> float:
    """SiamFC-style context side: p=(w+h)/2, s=sqrt((w+p)(h+p))."""
    p = (box.w + box.h) / 2
    return float(np.sqrt((box.w + p) * (box.h + p)))


def _crop_resample(frame: np.ndarray, cx: float, cy: float, side: float, out: int):
    """Bilinear crop of a square side x side region centered at (cx, cy),
    resampled to out x out; out-of-frame samples take the frame mean color.
    Returns (patch (3, out, out) float in [0,1], scale = out/side)."""
    h, w = frame.shape[:2]
    img = frame.astype(np.float64)
    mean = img.mean(axis=(0, 1))

    scale = out / side
    # output pixel centers mapped to frame pixel-index coordinates
    coords = (np.arange(out) + 0.5) / scale - 0.5
    xs = coords + (cx - side / 2)
    ys = coords + (cy - side / 2)

    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0

    # assemble the four bilinear taps with per-tap validity
    patch = np.zeros((out, out, 3))
    wsum = np.zeros((out, out, 1))
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yi = y0 + dy
            xi = x0 + dx
            vy = (yi >= 0) & (yi < h)
            vx = (xi >= 0) & (xi < w)
            yc = np.clip(yi, 0, h - 1)
            xc = np.clip(xi, 0, w - 1)
            vals = img[yc[:, None], xc[None, :]].copy()
            invalid = ~(vy[:, None] & vx[None, :])
            vals[invalid] = mean
            weight = (wy[:, None] * wx[None, :])[:, :, None]
            patch += vals * weight
            wsum += weight
    patch = patch / np.maximum(wsum, 1e-12)
    patch = np.clip(patch / 255.0, 0.0, 1.0)
    return patch.transpose(2, 0, 1), scale


def crop_template(frame: np.ndarray, box: Box):
    """127x127 context crop around the target. Returns (patch, scale)."""
    s = context_side(box)
    return _crop_resample(frame, box.cx, box.cy, s, TEMPLATE_SIZE)


def crop_search(frame: np.ndarray, box: Box):
    """255x255 search crop centered on the (previous) box, at the scale set
    by the same context rule. Returns (patch, scale)."""
    s = context_side(box) * SEARCH_SIZE / TEMPLATE_SIZE
    return _crop_resample(frame, box.cx, box.cy, s, SEARCH_SIZE)


def box_to_crop(box: Box, center: Box, side: float, scale: float) -> Box:
    """Map a frame-coordinate box into crop coordinates (crop of `side`
    centered on `center`, resampled by `scale`)."""
    ox = center.cx - side / 2
    oy = center.cy - side / 2
    return Box(
        (box.cx - ox) * scale, (box.cy - oy) * scale, box.w * scale, box.h * scale
    )


def box_to_frame(box: Box, center: Box, side: float, scale: float) -> Box:
    ox = center.cx - side / 2
    oy = center.cy - side / 2
    return Box(
        box.cx / scale + ox, box.cy / scale + oy, box.w / scale, box.h / scale
    )


def search_geometry(box: Box) -> tuple[float, float]:
    """(side, scale) of the search crop anchored on `box`."""
    side = context_side(box) * SEARCH_SIZE / TEMPLATE_SIZE
    return side, SEARCH_SIZE / side


# -- training pairs -------------------------------------------------------


@dataclass
class TrainingPair:
    template: np.ndarray
    search: np.ndarray
    gt_in_search: Box
    prev_in_search: Box
    frame_gap: int


class Dataset:
    """In-memory view over an on-disk dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        dirs = list_sequences(self.root)
        if not dirs:
            raise FileNotFoundError(f"no sequences under {self.root}")
        self.sequences = [load_sequence(d) for d in dirs]

    def __len__(self):
        return len(self.sequences)


def make_pair(seq: SequenceRecord, i: int, j: int) -> TrainingPair:
    """Template from frame i, search crop centered on frame i's box (the
    'previous frame' analogue), ground truth from frame j."""
    anchor_box = seq.gt[i]
    template, _ = crop_template(seq.frames[i], anchor_box)
    search, _ = crop_search(seq.frames[j], anchor_box)
    side, scale = search_geometry(anchor_box)
    return TrainingPair(
        template=template,
        search=search,
        gt_in_search=box_to_crop(seq.gt[j], anchor_box, side, scale),
        prev_in_search=box_to_crop(anchor_box, anchor_box, side, scale),
        frame_gap=j - i,
    )


def sample_pair(dataset: Dataset, seed: int, max_gap: int = 10) -> TrainingPair:
    """Uniformly sample a sequence and a frame pair at most max_gap apart."""
    rng = np.random.default_rng(seed)
    seq = dataset.sequences[int(rng.integers(len(dataset)))]
    i = int(rng.integers(len(seq.frames)))
    gap = int(rng.integers(0, min(max_gap, len(seq.frames) - 1 - i) + 1))
    return make_pair(seq, i, i + gap)
