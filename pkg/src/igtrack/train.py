"""Pairwise training loop for both modes.

Every step samples a template/search pair, runs the Siamese forward pass,
composes classification + regression (+ IoU, in ig mode) losses, and takes
one momentum-SGD step at the exponentially decaying learning rate. All
randomness is derived from the run seed, so a rerun is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import iou_module as M
from . import losses as L
from .anchors import AnchorSpec, assign_anchor_labels, generate_anchors
from .data import Dataset, sample_pair
from .geometry import Box
from .net import NetConfig, ParamStore, backward, forward, init_params, lr_schedule, sgd_step


@dataclass
class TrainConfig:
    mode: str = "ig"
    epochs: int = 40
    steps_per_epoch: int = 16
    batch_size: int = 8
    lr_start: float = 0.005
    lr_end: float = 0.00005
    momentum: float = 0.9
    clip_grad_norm: float = 1.0  # 0 disables clipping
    seed: int = 0
    max_gap: int = 10
    K: int = M.DEFAULT_K
    alpha: float = M.DEFAULT_ALPHA
    beta: float = M.DEFAULT_BETA
    label_hi: float = 0.6
    label_lo: float = 0.3
    max_pos: int = 16
    max_neg: int = 48
    anchor_base_size: float = 64.0
    anchor_ratios: tuple[float, ...] = (1 / 3, 1 / 2, 1.0, 2.0, 3.0)

    def __post_init__(self):
        if self.mode not in ("base", "ig"):
            raise ValueError("mode must be 'base' or 'ig'")


def anchor_spec_for(net_cfg: NetConfig, cfg) -> AnchorSpec:
    return AnchorSpec(
        stride=net_cfg.total_stride,
        ratios=tuple(cfg.anchor_ratios),
        base_size=cfg.anchor_base_size,
        response_size=net_cfg.response_size,
    )


def pair_motion_state(pair) -> M.MotionState:
    """Pairwise-training analogue of the previous box + velocity: the
    template frame's box in search coordinates, and the ground-truth center
    displacement across the sampled gap (zero for same-frame pairs)."""
    prev = pair.prev_in_search
    gt = pair.gt_in_search
    if pair.frame_gap > 0:
        velocity = (gt.cx - prev.cx, gt.cy - prev.cy)
    else:
        velocity = (0.0, 0.0)
    return M.MotionState(prev_box=prev, velocity=velocity)


def clip_gradients(grads: ParamStore, max_norm: float):
    """Scale all gradients down so their global L2 norm is at most
    max_norm. Keeps the aggressive early learning rate stable on this
    small network."""
    total = 0.0
    for _, g in grads.items():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        factor = np.float32(max_norm / norm)
        for name, g in grads.items():
            grads[name] = (g * factor).astype(g.dtype)


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    net_cfg: NetConfig | None = None,
    log_file=None,
) -> ParamStore:
    net_cfg = net_cfg or NetConfig()
    params = init_params(net_cfg, cfg.seed)
    grid = generate_anchors(anchor_spec_for(net_cfg, cfg), net_cfg.search_size)
    momentum_state: dict[str, np.ndarray] = {}

    gstep = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        for step in range(cfg.steps_per_epoch):
            # gradients are averaged over the batch in sampling order, so
            # the reduction order is fixed and runs are reproducible
            acc: ParamStore | None = None
            sums = np.zeros(3)
            for _ in range(cfg.batch_size):
                pair = sample_pair(dataset, seed=[cfg.seed, 7, gstep], max_gap=cfg.max_gap)
                labels = assign_anchor_labels(
                    grid,
                    pair.gt_in_search,
                    hi=cfg.label_hi,
                    lo=cfg.label_lo,
                    max_pos=cfg.max_pos,
                    max_neg=cfg.max_neg,
                    seed=gstep,
                )
                cls, reg, tape = forward(params, pair.template, pair.search, net_cfg)
                l_cls = L.cls_loss(cls, labels, net_cfg.response_size)
                l_reg = L.reg_loss(reg, labels, net_cfg.response_size)
                if cfg.mode == "ig":
                    l_iou, _ = M.iou_guided_loss(
                        tape,
                        cls,
                        reg,
                        grid,
                        pair.gt_in_search,
                        pair_motion_state(pair),
                        K=cfg.K,
                        alpha=cfg.alpha,
                        beta=cfg.beta,
                    )
                    loss = l_cls + l_reg + l_iou
                else:
                    l_iou = 0.0
                    loss = l_cls + l_reg
                try:
                    report = L.total_loss(l_cls, l_reg, l_iou)
                except FloatingPointError as e:
                    raise FloatingPointError(f"epoch {epoch} step {step}: {e}") from e
                sums += (report.l_cls, report.l_reg, report.l_iou)

                grads = backward(tape, loss)
                if acc is None:
                    acc = grads
                else:
                    for name, g in acc.items():
                        acc[name] = g + grads[name]
                gstep += 1
            for name, g in acc.items():
                acc[name] = g / cfg.batch_size
            if cfg.clip_grad_norm > 0:
                clip_gradients(acc, cfg.clip_grad_norm)
            params = sgd_step(params, acc, lr, cfg.momentum, momentum_state)
            if log_file is not None:
                b = cfg.batch_size
                log_file.write(
                    f"{epoch} {step} {sums[0] / b:.6f} {sums[1] / b:.6f} "
                    f"{sums[2] / b:.6f} {sums.sum() / b:.6f} {lr:.8f}\n"
                )
    return params


def evaluate_pairs(
    params: ParamStore,
    dataset: Dataset,
    cfg: TrainConfig,
    net_cfg: NetConfig | None = None,
    n_pairs: int = 50,
    seed: int = 12345,
) -> tuple[float, float]:
    """Held-out check of the IoU module: (mean 1-IoU loss of the train-mode
    soft prediction, mean IoU of the eval-mode hard prediction vs gt)."""
    net_cfg = net_cfg or NetConfig()
    grid = generate_anchors(anchor_spec_for(net_cfg, cfg), net_cfg.search_size)
    losses = []
    overlaps = []
    for i in range(n_pairs):
        pair = sample_pair(dataset, seed=[seed, 11, i], max_gap=cfg.max_gap)
        cls, reg, tape = forward(params, pair.template, pair.search, net_cfg)
        state = pair_motion_state(pair)
        l_iou, proposals = M.iou_guided_loss(
            tape, cls, reg, grid, pair.gt_in_search, state,
            K=cfg.K, alpha=cfg.alpha, beta=cfg.beta,
        )
        losses.append(float(l_iou.data))
        est = M.motion_estimate(tape, state)
        response = M.iou_response(est, proposals)
        pred = M.predict_box(response, proposals, state.prev_box, alpha=cfg.alpha)
        overlaps.append(M.iou_loss(pred, pair.gt_in_search))
    return float(np.mean(losses)), float(1.0 - np.mean(overlaps))
