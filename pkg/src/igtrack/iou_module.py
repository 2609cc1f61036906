"""IoU-guided proposal selection.

Head outputs are decoded into image-domain proposals; the top-K by
classification score are compared (by IoU) against a motion-extrapolated
estimate of the current box; the winner, size-smoothed against the previous
box, is the predicted box whose overlap with ground truth drives the IoU
loss.

Selection by argmax is not differentiable, so training uses a softmax
relaxation over the IoU response (sharpness beta); inference uses the hard
argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .anchors import AnchorGrid
from .geometry import DELTA_CLAMP, Box, iou
from .net import Tape, motion_apply

DEFAULT_K = 5
DEFAULT_ALPHA = 0.3
DEFAULT_BETA = 10.0


@dataclass
class ProposalSet:
    """Top-K proposals in search-image pixels, scores non-increasing.

    boxes: (K, 4) center-form array; scores: (K,) positive-class
    probabilities; source_index: (K,) anchor indices.
    """

    boxes: np.ndarray
    scores: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.boxes)

    def box(self, i: int) -> Box:
        cx, cy, w, h = self.boxes[i]
        return Box(cx, cy, w, h)


@dataclass
class MotionState:
    prev_box: Box
    velocity: tuple[float, float] = (0.0, 0.0)


@dataclass
class IouResponse:
    values: np.ndarray


def anchor_scores(cls: np.ndarray, num_ratios: int) -> np.ndarray:
    """Positive-class probability per anchor (ratio-major flat order) from a
    (2k, R, R) classification map."""
    k = num_ratios
    r = cls.shape[-1]
    pairs = cls.reshape(k, 2, r, r)
    m = pairs.max(axis=1, keepdims=True)
    e = np.exp(pairs - m)
    probs = e[:, 1] / (e[:, 0] + e[:, 1])
    return probs.reshape(k * r * r)


def decode_anchors(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Vectorized decode of (N, 4) deltas against (N, 4) anchors, with the
    usual log-ratio clamp."""
    d = np.clip(deltas[:, 2:], -DELTA_CLAMP, DELTA_CLAMP)
    out = np.empty_like(anchors)
    out[:, 0] = anchors[:, 0] + deltas[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + deltas[:, 1] * anchors[:, 3]
    out[:, 2] = anchors[:, 2] * np.exp(d[:, 0])
    out[:, 3] = anchors[:, 3] * np.exp(d[:, 1])
    return out


def clip_boxes(boxes: np.ndarray, size: float) -> np.ndarray:
    """Clip center-form boxes into [0, size]^2 with sides >= 1 px."""
    x1 = np.clip(boxes[:, 0] - boxes[:, 2] / 2, 0, size)
    y1 = np.clip(boxes[:, 1] - boxes[:, 3] / 2, 0, size)
    x2 = np.clip(boxes[:, 0] + boxes[:, 2] / 2, 0, size)
    y2 = np.clip(boxes[:, 1] + boxes[:, 3] / 2, 0, size)
    w = np.maximum(x2 - x1, 1.0)
    h = np.maximum(y2 - y1, 1.0)
    out = np.empty_like(boxes)
    out[:, 0] = (x1 + x2) / 2
    out[:, 1] = (y1 + y2) / 2
    out[:, 2] = w
    out[:, 3] = h
    return out


def reg_deltas(reg: np.ndarray, num_ratios: int) -> np.ndarray:
    """(4k, R, R) regression map -> (N, 4) deltas in anchor order."""
    k = num_ratios
    r = reg.shape[-1]
    return reg.reshape(k, 4, r, r).transpose(0, 2, 3, 1).reshape(k * r * r, 4)


def select_topk(cls, reg, grid: AnchorGrid, K: int, search_size: int) -> ProposalSet:
    """Top-K proposals by classification score, decoded into search-image
    pixels and clipped. Ties break toward the lower anchor index."""
    cls = cls.data if isinstance(cls, Var) else np.asarray(cls)
    reg = reg.data if isinstance(reg, Var) else np.asarray(reg)
    if K < 1 or K > len(grid):
        raise ValueError(f"K={K} outside [1, {len(grid)}]")
    k = grid.spec.num_anchors // grid.spec.response_size ** 2
    scores = anchor_scores(cls, k)
    order = np.argsort(-scores, kind="stable")[:K]
    deltas = reg_deltas(reg, k)[order]
    boxes = clip_boxes(decode_anchors(grid.boxes[order], deltas), search_size)
    return ProposalSet(boxes=boxes, scores=scores[order], source_index=order)


def motion_estimate(tape: Tape, state: MotionState) -> Box:
    """Learned extrapolation of the previous box one step forward."""
    b = state.prev_box
    vec = Var(
        np.array(
            [b.cx, b.cy, b.w, b.h, state.velocity[0], state.velocity[1]],
            dtype=tape.config.dtype,
        )
    )
    out = motion_apply(tape, vec).data
    return Box(float(out[0]), float(out[1]), max(float(out[2]), 1.0), max(float(out[3]), 1.0))


def iou_response(estimated: Box, proposals: ProposalSet) -> IouResponse:
    values = np.array([iou(estimated, proposals.box(i)) for i in range(len(proposals))])
    return IouResponse(values=values)


def predict_box(
    response: IouResponse,
    proposals: ProposalSet,
    prev: Box,
    alpha: float = DEFAULT_ALPHA,
    train_mode: bool = False,
    beta: float = DEFAULT_BETA,
) -> Box:
    """Pick the proposal with the best IoU response and smooth its size
    against the previous box: size = (1-alpha)*prev + alpha*picked.

    train_mode replaces the argmax with a softmax(beta * response) blend.
    """
    if len(proposals) == 0:
        raise ValueError("empty proposal set")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if train_mode:
        z = beta * response.values
        w = np.exp(z - z.max())
        w /= w.sum()
        p = w @ proposals.boxes
    else:
        p = proposals.boxes[int(np.argmax(response.values))]
    return Box(
        cx=float(p[0]),
        cy=float(p[1]),
        w=float((1 - alpha) * prev.w + alpha * p[2]),
        h=float((1 - alpha) * prev.h + alpha * p[3]),
    )


def iou_loss(pred: Box, gt: Box) -> float:
    return 1.0 - iou(pred, gt)


# -- differentiable training path -----------------------------------------


def decode_anchors_var(anchors: np.ndarray, deltas: Var) -> Var:
    """Differentiable decode for (K, 4) delta Vars against constant anchors."""
    a = anchors.astype(deltas.data.dtype)
    cx = deltas[:, 0] * a[:, 2] + a[:, 0]
    cy = deltas[:, 1] * a[:, 3] + a[:, 1]
    w = ad.exp(ad.clip(deltas[:, 2], -DELTA_CLAMP, DELTA_CLAMP)) * a[:, 2]
    h = ad.exp(ad.clip(deltas[:, 3], -DELTA_CLAMP, DELTA_CLAMP)) * a[:, 3]
    return ad.stack([cx, cy, w, h], axis=1)


def clip_boxes_var(boxes: Var, size: float) -> Var:
    x1 = ad.clip(boxes[:, 0] - boxes[:, 2] * 0.5, 0.0, size)
    y1 = ad.clip(boxes[:, 1] - boxes[:, 3] * 0.5, 0.0, size)
    x2 = ad.clip(boxes[:, 0] + boxes[:, 2] * 0.5, 0.0, size)
    y2 = ad.clip(boxes[:, 1] + boxes[:, 3] * 0.5, 0.0, size)
    w = ad.maximum(x2 - x1, 1.0)
    h = ad.maximum(y2 - y1, 1.0)
    return ad.stack([(x1 + x2) * 0.5, (y1 + y2) * 0.5, w, h], axis=1)


def iou_many_var(est: Var, boxes: Var) -> Var:
    """IoU of one (4,) box Var against (K, 4) box Vars, differentiable."""
    ex1, ey1 = est[0] - est[2] * 0.5, est[1] - est[3] * 0.5
    ex2, ey2 = est[0] + est[2] * 0.5, est[1] + est[3] * 0.5
    bx1 = boxes[:, 0] - boxes[:, 2] * 0.5
    by1 = boxes[:, 1] - boxes[:, 3] * 0.5
    bx2 = boxes[:, 0] + boxes[:, 2] * 0.5
    by2 = boxes[:, 1] + boxes[:, 3] * 0.5
    iw = ad.maximum(ad.minimum(ex2, bx2) - ad.maximum(ex1, bx1), 0.0)
    ih = ad.maximum(ad.minimum(ey2, by2) - ad.maximum(ey1, by1), 0.0)
    inter = iw * ih
    union = est[2] * est[3] + boxes[:, 2] * boxes[:, 3] - inter
    return inter / union


def iou_single_var(a: Var, b: Box) -> Var:
    """Differentiable IoU of a (4,) box Var against a constant box."""
    ax1, ay1 = a[0] - a[2] * 0.5, a[1] - a[3] * 0.5
    ax2, ay2 = a[0] + a[2] * 0.5, a[1] + a[3] * 0.5
    iw = ad.maximum(ad.minimum(ax2, b.x2) - ad.maximum(ax1, b.x1), 0.0)
    ih = ad.maximum(ad.minimum(ay2, b.y2) - ad.maximum(ay1, b.y1), 0.0)
    inter = iw * ih
    union = a[2] * a[3] + b.area - inter
    return inter / union


def soft_predict_var(
    values: Var, boxes: Var, prev: Box, alpha: float, beta: float
) -> Var:
    """Softmax-relaxed selection + size interpolation, returning a (4,)
    box Var."""
    weights = ad.softmax(values * beta, axis=0)
    cx = (weights * boxes[:, 0]).sum()
    cy = (weights * boxes[:, 1]).sum()
    pw = (weights * boxes[:, 2]).sum()
    ph = (weights * boxes[:, 3]).sum()
    w = pw * alpha + (1 - alpha) * prev.w
    h = ph * alpha + (1 - alpha) * prev.h
    return ad.stack([cx, cy, w, h])


def iou_guided_loss(
    tape: Tape,
    cls: Var,
    reg: Var,
    grid: AnchorGrid,
    gt: Box,
    state: MotionState,
    K: int = DEFAULT_K,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> tuple[Var, ProposalSet]:
    """The full training-time IoU module: top-K selection (hard, by score),
    differentiable decode/clip, motion estimate, IoU response, soft
    selection, size smoothing, and 1 - IoU(pred, gt).

    Gradients flow into the regression head and the motion block.
    """
    search_size = tape.config.search_size
    k = grid.spec.num_anchors // grid.spec.response_size ** 2
    scores = anchor_scores(cls.data, k)
    order = np.argsort(-scores, kind="stable")[:K]

    r = reg.data.shape[-1]
    ratio = order // (r * r)
    rem = order % (r * r)
    row, col = rem // r, rem % r
    chan = 4 * ratio[:, None] + np.arange(4)[None, :]
    deltas = reg[chan, row[:, None], col[:, None]]  # (K, 4) Var

    boxes = clip_boxes_var(decode_anchors_var(grid.boxes[order], deltas), search_size)

    b = state.prev_box
    vec = Var(
        np.array(
            [b.cx, b.cy, b.w, b.h, state.velocity[0], state.velocity[1]],
            dtype=tape.config.dtype,
        )
    )
    est_raw = motion_apply(tape, vec)
    est = ad.stack(
        [est_raw[0], est_raw[1], ad.maximum(est_raw[2], 1.0), ad.maximum(est_raw[3], 1.0)]
    )

    values = iou_many_var(est, boxes)
    pred = soft_predict_var(values, boxes, b, alpha, beta)
    loss = 1.0 - iou_single_var(pred, gt)

    proposals = ProposalSet(
        boxes=boxes.data.copy(), scores=scores[order], source_index=order
    )
    return loss, proposals
