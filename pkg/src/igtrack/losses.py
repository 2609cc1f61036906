"""Classification, regression and total loss composition."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .anchors import AnchorLabels


@dataclass(frozen=True)
class LossReport:
    l_cls: float
    l_reg: float
    l_iou: float
    total: float


def _anchor_cell(indices: np.ndarray, response_size: int):
    """anchor index -> (ratio, row, col) under ratio-major ordering."""
    rr = response_size * response_size
    ratio = indices // rr
    rem = indices % rr
    return ratio, rem // response_size, rem % response_size


def cls_loss(cls: Var, labels: AnchorLabels, response_size: int) -> Var:
    """Mean two-class softmax cross-entropy over the sampled positive and
    negative anchors. Channel 2r is the negative class and 2r+1 the positive
    class for ratio r."""
    pos = labels.positive_indices
    neg = labels.negative_indices
    sampled = np.concatenate([pos, neg])
    if len(sampled) == 0:
        raise ValueError("no sampled anchors for classification loss")
    truth = np.concatenate([np.ones(len(pos), dtype=int), np.zeros(len(neg), dtype=int)])

    ratio, row, col = _anchor_cell(sampled, response_size)
    neg_logit = cls[2 * ratio, row, col]
    pos_logit = cls[2 * ratio + 1, row, col]
    logits = ad.stack([neg_logit, pos_logit], axis=1)  # (S, 2)
    logp = ad.log_softmax(logits, axis=1)
    picked = logp[np.arange(len(sampled)), truth]
    return -picked.mean()


def smooth_l1(err: Var) -> Var:
    """0.5 e^2 inside |e| < 1, |e| - 0.5 outside (knee at 1)."""
    a = ad.maximum(err, -err)
    quad_mask = (a.data < 1.0).astype(err.data.dtype)
    quad = a * a * 0.5
    lin = a - 0.5
    return quad * quad_mask + lin * (1.0 - quad_mask)


def reg_loss(reg: Var, labels: AnchorLabels, response_size: int) -> Var:
    """Smooth-L1 over regression deltas, summed over the 4 coordinates and
    averaged over positive anchors."""
    pos = labels.positive_indices
    if len(pos) == 0:
        raise ValueError("regression loss needs at least one positive anchor")
    ratio, row, col = _anchor_cell(pos, response_size)
    chan = 4 * ratio[:, None] + np.arange(4)[None, :]  # (P, 4)
    pred = reg[chan, row[:, None], col[:, None]]
    target = labels.target[pos].astype(reg.data.dtype)
    per_coord = smooth_l1(pred - target)
    return per_coord.sum(axis=1).mean()


def total_loss(l_cls, l_reg, l_iou) -> LossReport:
    """Unit-weight sum of the three components, with finiteness checks."""
    def scalar(x):
        return float(x.data) if isinstance(x, Var) else float(x)

    parts = {"l_cls": scalar(l_cls), "l_reg": scalar(l_reg), "l_iou": scalar(l_iou)}
    for name, v in parts.items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss component {name}={v}")
    return LossReport(
        l_cls=parts["l_cls"],
        l_reg=parts["l_reg"],
        l_iou=parts["l_iou"],
        total=parts["l_cls"] + parts["l_reg"] + parts["l_iou"],
    )
