"""Tracking metrics: VOT-style supervised Accuracy/Robustness with an EAO
approximation, and GOT-style one-pass AO/SR plus center-error precision.

The EAO estimator here deliberately skips per-attribute weighting and
derives its length interval from the dataset's own length quantiles; it is
meant for A/B comparison between modes, not leaderboard numbers, hence the
name eao_approx.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, iou


@dataclass
class VotRun:
    """overlaps: per-frame IoU; NaN marks init frames, skipped frames and
    the accuracy burn-in after a re-init."""

    overlaps: np.ndarray
    failures: int
    curve: np.ndarray  # overlaps from first init, zero-extended past failure


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    robustness: float  # raw failure count
    robustness_per100: float
    eao: float
    ao: float
    sr50: float
    sr75: float
    precision20: float

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "robustness": self.robustness,
            "robustness_per100": self.robustness_per100,
            "eao_approx": self.eao,
            "ao": self.ao,
            "sr50": self.sr50,
            "sr75": self.sr75,
            "precision20": self.precision20,
        }


def vot_run(sequence, init_fn, step_fn, reinit_gap: int = 5, burn_in: int = 10) -> VotRun:
    """Supervised VOT protocol over one sequence.

    init_fn(frame_index) -> state (tracker initialized on that frame's gt);
    step_fn(state, frame_index) -> (state, Box).

    A frame with zero overlap is a failure; the tracker is re-initialized on
    ground truth reinit_gap frames later and the burn_in frames after that
    re-init are excluded from accuracy averaging.
    """
    n = len(sequence.gt)
    overlaps = np.full(n, np.nan)
    curve = np.zeros(n)
    failures = 0
    first_failure_at: int | None = None

    state = init_fn(0)
    t = 1
    exclude_until = 0  # accuracy burn-in horizon
    while t < n:
        state, box = step_fn(state, t)
        ov = iou(box, sequence.gt[t])
        if ov == 0.0:
            failures += 1
            if first_failure_at is None:
                first_failure_at = t
            reinit_at = t + reinit_gap
            if reinit_at >= n:
                break
            state = init_fn(reinit_at)
            exclude_until = reinit_at + burn_in
            t = reinit_at + 1
            continue
        if t >= exclude_until:
            overlaps[t] = ov
        if first_failure_at is None:
            curve[t] = ov
        t += 1
    return VotRun(overlaps=overlaps, failures=failures, curve=curve)


def accuracy(overlaps: np.ndarray) -> float:
    vals = overlaps[~np.isnan(overlaps)]
    if len(vals) == 0:
        return 0.0
    return float(vals.mean())


def robustness(failures: int, frames: int) -> tuple[int, float]:
    """(raw failure count, failures per 100 frames)."""
    return failures, 100.0 * failures / frames


def eao_approx(curves: list[np.ndarray], interval: tuple[int, int] | None = None) -> float:
    """Mean, over lengths L in the interval, of the expected average overlap
    of runs truncated/zero-extended to L. Default interval: the 15%/85%
    quantiles of the sequence lengths."""
    if not curves:
        raise ValueError("need at least one overlap curve")
    lengths = np.array([len(c) for c in curves])
    if interval is None:
        lo = max(int(np.quantile(lengths, 0.15)), 1)
        hi = max(int(np.quantile(lengths, 0.85)), lo)
    else:
        lo, hi = interval
        if lo > hi:
            raise ValueError("interval lower bound exceeds upper bound")
    vals = []
    for L in range(lo, hi + 1):
        per_run = []
        for c in curves:
            padded = np.zeros(L)
            m = min(L, len(c))
            padded[:m] = c[:m]
            per_run.append(padded.mean())
        vals.append(np.mean(per_run))
    return float(np.mean(vals))


def got_metrics(pred: list[Box], gt: list[Box]) -> tuple[float, float, float]:
    """One-pass AO / SR@0.5 / SR@0.75, excluding the init frame."""
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gt)} gt")
    ov = np.array([iou(p, g) for p, g in zip(pred[1:], gt[1:])])
    return float(ov.mean()), float((ov > 0.5).mean()), float((ov > 0.75).mean())


def precision_center(pred: list[Box], gt: list[Box], threshold: float = 20.0) -> float:
    """Fraction of frames whose center error is below the threshold."""
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gt)} gt")
    d = np.array(
        [np.hypot(p.cx - g.cx, p.cy - g.cy) for p, g in zip(pred, gt)]
    )
    return float((d < threshold).mean())


def format_report(values: dict[str, float]) -> str:
    """Aligned plain-text table."""
    width = max(len(k) for k in values)
    lines = [f"{k.ljust(width)}  {v:.6f}" for k, v in values.items()]
    return "\n".join(lines) + "\n"


def write_kv(path, values: dict[str, float]):
    """Flat key=value file for scripting."""
    with open(path, "w") as f:
        for k, v in values.items():
            f.write(f"{k}={v:.6f}\n")


def read_kv(path) -> dict[str, float]:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                k, v = line.split("=", 1)
                out[k] = float(v)
    return out
