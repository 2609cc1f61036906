"""Central finite-difference verification of the reverse-mode gradients,
including the full path through soft proposal selection and the IoU loss.

Runs on a reduced network (template 39, search 55, two conv layers) in
float64 so every parameter can be checked exhaustively in seconds.
"""

from __future__ import annotations

import numpy as np

from . import iou_module as M
from . import losses as L
from .anchors import AnchorSpec, assign_anchor_labels, generate_anchors
from .geometry import Box
from .net import REDUCED_CONFIG, NetConfig, ParamStore, backward, forward, init_params


def _reduced_problem(seed: int):
    cfg = REDUCED_CONFIG
    rng = np.random.default_rng(seed)
    template = rng.uniform(0, 1, size=(3, cfg.template_size, cfg.template_size))
    search = rng.uniform(0, 1, size=(3, cfg.search_size, cfg.search_size))
    spec = AnchorSpec(
        stride=cfg.total_stride,
        ratios=(0.5, 1.0, 2.0, 1 / 3, 3.0),
        base_size=16.0,
        response_size=cfg.response_size,
    )
    grid = generate_anchors(spec, cfg.search_size)
    c = cfg.search_size / 2
    gt = Box(c + rng.uniform(-4, 4), c + rng.uniform(-4, 4), rng.uniform(14, 20), rng.uniform(14, 20))
    prev = Box(gt.cx - 3.0, gt.cy + 2.0, gt.w * 1.1, gt.h * 0.9)
    state = M.MotionState(prev_box=prev, velocity=(3.0, -2.0))
    labels = assign_anchor_labels(grid, gt, seed=seed)
    return cfg, template, search, grid, gt, state, labels


def _loss_value(params: ParamStore, cfg, template, search, grid, gt, state, labels) -> float:
    cls, reg, tape = forward(params, template, search, cfg)
    l_cls = L.cls_loss(cls, labels, cfg.response_size)
    l_reg = L.reg_loss(reg, labels, cfg.response_size)
    l_iou, _ = M.iou_guided_loss(tape, cls, reg, grid, gt, state)
    return float((l_cls + l_reg + l_iou).data)


def run_gradcheck(seed: int = 3, step: float = 1e-6, tolerance: float = 1e-3):
    """Check every parameter of the reduced config against central finite
    differences. Returns (passed, {param_name: max relative error})."""
    cfg, template, search, grid, gt, state, labels = _reduced_problem(seed)
    params = init_params(cfg, seed)

    cls, reg, tape = forward(params, template, search, cfg)
    l_cls = L.cls_loss(cls, labels, cfg.response_size)
    l_reg = L.reg_loss(reg, labels, cfg.response_size)
    l_iou, _ = M.iou_guided_loss(tape, cls, reg, grid, gt, state)
    grads = backward(tape, l_cls + l_reg + l_iou)

    errors: dict[str, float] = {}
    for name in params.names():
        p = params[name]
        analytic = grads[name]
        worst = 0.0
        flat = p.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = _loss_value(params, cfg, template, search, grid, gt, state, labels)
            flat[i] = orig - step
            lo = _loss_value(params, cfg, template, search, grid, gt, state, labels)
            flat[i] = orig
            fd = (hi - lo) / (2 * step)
            denom = max(abs(fd), abs(aflat[i]), 1e-4)
            worst = max(worst, abs(fd - aflat[i]) / denom)
        errors[name] = worst
    passed = all(e <= tolerance for e in errors.values())
    return passed, errors
