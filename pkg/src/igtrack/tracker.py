"""Sequence-level inference.

Two modes share the Siamese forward pass and differ in post-processing:

* base  — scale/ratio penalty + cosine window re-ranking over anchor
          scores (optionally greedy NMS), then argmax.
* ig    — no penalties; top-K proposals, learned motion estimate, IoU
          response argmax.

Both end with size interpolation against the previous box and a clip into
frame bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import data as D
from . import iou_module as M
from .anchors import AnchorGrid, AnchorSpec, generate_anchors
from .geometry import Box, clip_box
from .net import NetConfig, ParamStore, Tape, embed, heads, make_tape


@dataclass(frozen=True)
class TrackerConfig:
    mode: str = "ig"
    penalties: bool = False
    penalty_k: float = 0.055
    window_influence: float = 0.42
    nms: bool = False
    nms_threshold: float = 0.7
    alpha: float = 0.3
    K: int = 5
    beta: float = 10.0
    use_iou_module: bool = True
    anchor_base_size: float = 64.0
    anchor_ratios: tuple[float, ...] = (1 / 3, 1 / 2, 1.0, 2.0, 3.0)


def default_config(mode: str, penalties: bool | None = None, **overrides) -> TrackerConfig:
    """Mode defaults: base runs with penalties and window on, ig with both
    off (they can still be forced either way)."""
    if mode not in ("base", "ig"):
        raise ValueError("mode must be 'base' or 'ig'")
    cfg = TrackerConfig(mode=mode, penalties=(mode == "base"))
    if penalties is not None:
        cfg = replace(cfg, penalties=penalties)
    return replace(cfg, **overrides)


@dataclass
class TrackerState:
    current_box: Box
    velocity: tuple[float, float]
    template_features: np.ndarray
    params: ParamStore
    net_config: NetConfig
    grid: AnchorGrid
    config: TrackerConfig
    window: np.ndarray


def _hanning_window(grid: AnchorGrid) -> np.ndarray:
    r = grid.spec.response_size
    n_ratios = len(grid.spec.ratios)
    w = np.outer(np.hanning(r), np.hanning(r))
    return np.tile(w.reshape(1, r, r), (n_ratios, 1, 1)).reshape(-1)


def _context_sides(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    p = (w + h) / 2
    return np.sqrt((w + p) * (h + p))


def track_init(
    model: ParamStore,
    frame: np.ndarray,
    box: Box,
    mode: str = "ig",
    config: TrackerConfig | None = None,
    net_config: NetConfig | None = None,
) -> TrackerState:
    """Embed the first-frame template once and cache its features for the
    whole sequence."""
    cfg = config if config is not None else default_config(mode)
    net_cfg = net_config if net_config is not None else NetConfig()
    h, w = frame.shape[:2]
    if box.x1 < -1e-6 or box.y1 < -1e-6 or box.x2 > w + 1e-6 or box.y2 > h + 1e-6:
        raise ValueError("initial box must lie inside the frame")

    template, _ = D.crop_template(frame, box)
    tape = make_tape(net_cfg, model)
    zf = embed(tape, template)

    spec = AnchorSpec(
        stride=net_cfg.total_stride,
        ratios=cfg.anchor_ratios,
        base_size=cfg.anchor_base_size,
        response_size=net_cfg.response_size,
    )
    grid = generate_anchors(spec, net_cfg.search_size)
    return TrackerState(
        current_box=box,
        velocity=(0.0, 0.0),
        template_features=zf.data.copy(),
        params=model,
        net_config=net_cfg,
        grid=grid,
        config=cfg,
        window=_hanning_window(grid),
    )


def _nms_keep(boxes: np.ndarray, order: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy NMS over center-form boxes; `order` is score-descending."""
    x1 = boxes[:, 0] - boxes[:, 2] / 2
    y1 = boxes[:, 1] - boxes[:, 3] / 2
    x2 = boxes[:, 0] + boxes[:, 2] / 2
    y2 = boxes[:, 1] + boxes[:, 3] / 2
    areas = boxes[:, 2] * boxes[:, 3]
    keep = []
    rest = list(order)
    while rest:
        i = rest.pop(0)
        keep.append(i)
        survivors = []
        for j in rest:
            iw = max(min(x2[i], x2[j]) - max(x1[i], x1[j]), 0.0)
            ih = max(min(y2[i], y2[j]) - max(y1[i], y1[j]), 0.0)
            inter = iw * ih
            if inter / (areas[i] + areas[j] - inter) <= threshold:
                survivors.append(j)
        rest = survivors
    return np.array(keep, dtype=int)


def track_frame(state: TrackerState, frame: np.ndarray) -> tuple[TrackerState, Box]:
    """One tracking step. Never aborts: degenerate outputs are clipped."""
    cfg = state.config
    net_cfg = state.net_config
    prev = state.current_box
    fh, fw = frame.shape[:2]

    search, _ = D.crop_search(frame, prev)
    side, scale = D.search_geometry(prev)
    prev_crop = D.box_to_crop(prev, prev, side, scale)

    tape = make_tape(net_cfg, state.params)
    xf = embed(tape, search)
    from .autodiff import Var

    cls, reg = heads(tape, Var(state.template_features), xf)

    k = len(cfg.anchor_ratios)
    scores = M.anchor_scores(cls.data, k)
    deltas = M.reg_deltas(reg.data, k)
    boxes = M.clip_boxes(M.decode_anchors(state.grid.boxes, deltas), net_cfg.search_size)

    if cfg.mode == "base" or not cfg.use_iou_module:
        pscore = scores
        if cfg.penalties:
            ratio_prev = prev_crop.w / prev_crop.h
            ratios = boxes[:, 2] / boxes[:, 3]
            r_c = np.maximum(ratios / ratio_prev, ratio_prev / ratios)
            s_prev = _context_sides(np.array(prev_crop.w), np.array(prev_crop.h))
            s_i = _context_sides(boxes[:, 2], boxes[:, 3])
            s_c = np.maximum(s_i / s_prev, s_prev / s_i)
            pscore = scores * np.exp(-cfg.penalty_k * (r_c * s_c - 1.0))
            pscore = pscore * (1.0 - cfg.window_influence) + state.window * cfg.window_influence
        if cfg.nms:
            order = np.argsort(-pscore, kind="stable")
            keep = _nms_keep(boxes, order, cfg.nms_threshold)
            best = int(keep[0])
        else:
            best = int(np.argmax(pscore))
        chosen = boxes[best]
    else:
        proposals = M.select_topk(cls, reg, state.grid, cfg.K, net_cfg.search_size)
        vstate = M.MotionState(
            prev_box=prev_crop,
            velocity=(state.velocity[0] * scale, state.velocity[1] * scale),
        )
        est = M.motion_estimate(tape, vstate)
        response = M.iou_response(est, proposals)
        if response.values.max() > 0:
            chosen = proposals.boxes[int(np.argmax(response.values))]
        else:
            # IoU response is flat at zero: fall back to the top-scored
            # proposal rather than picking arbitrarily
            chosen = proposals.boxes[0]

    out_crop = Box(
        cx=float(chosen[0]),
        cy=float(chosen[1]),
        w=float((1 - cfg.alpha) * prev_crop.w + cfg.alpha * chosen[2]),
        h=float((1 - cfg.alpha) * prev_crop.h + cfg.alpha * chosen[3]),
    )
    out = D.box_to_frame(out_crop, prev, side, scale)
    out = clip_box(out, fw, fh)

    new_state = replace(
        state,
        current_box=out,
        velocity=(out.cx - prev.cx, out.cy - prev.cy),
    )
    return new_state, out


def track_sequence(
    model: ParamStore,
    sequence: D.SequenceRecord,
    mode: str = "ig",
    config: TrackerConfig | None = None,
    net_config: NetConfig | None = None,
) -> list[Box]:
    """Init on the first frame's ground truth, then track every frame."""
    state = track_init(model, sequence.frames[0], sequence.gt[0], mode, config, net_config)
    out = [sequence.gt[0]]
    for frame in sequence.frames[1:]:
        state, box = track_frame(state, frame)
        out.append(box)
    return out
