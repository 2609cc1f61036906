"""Command-line entry point: dataset generation, training, tracking,
evaluation, gradient checking and base-vs-ig comparison.

Configuration precedence is defaults < config file < flags; every command
writes its fully resolved configuration next to its outputs so a run can be
reproduced from the artifacts alone.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import evaluation as E
from .geometry import Box, iou
from .gradcheck import run_gradcheck
from .net import NetConfig, ParamStore
from .tracker import default_config, track_frame, track_init, track_sequence
from .train import TrainConfig, train, evaluate_pairs


class ConfigError(ValueError):
    pass


def load_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def resolve_config(defaults: dict, config_file: str | None, flags: dict) -> dict:
    """defaults < config file < explicitly passed flags. Unknown keys in the
    config file are rejected."""
    resolved = dict(defaults)
    if config_file:
        for k, v in load_config_file(config_file).items():
            if k not in defaults:
                raise ConfigError(f"unknown config key: {k}")
            resolved[k] = type(defaults[k])(v) if defaults[k] is not None else v
    for k, v in flags.items():
        if v is not None:
            resolved[k] = v
    return resolved


def write_run_config(directory, name: str, resolved: dict):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / name, "w") as f:
        for k, v in resolved.items():
            f.write(f"{k}={v}\n")


def _read_csv_boxes(path) -> list[Box]:
    return D.read_groundtruth(path)


def _write_csv_boxes(path, boxes: list[Box]):
    D.write_groundtruth(path, boxes)


# -- subcommands ----------------------------------------------------------


def cmd_gen_data(args) -> int:
    defaults = dict(
        out=None, sequences=10, frames=30, size=320, motion="constant-velocity",
        scale_drift=1.0, clutter=3, seed=0,
    )
    cfg = resolve_config(defaults, args.config, {
        "out": args.out, "sequences": args.sequences, "frames": args.frames,
        "size": args.size, "motion": args.motion, "scale_drift": args.scale_drift,
        "clutter": args.clutter, "seed": args.seed,
    })
    if cfg["out"] is None:
        raise ConfigError("--out is required")
    D.gen_synthetic(
        cfg["out"], cfg["sequences"], cfg["frames"], cfg["size"],
        cfg["motion"], cfg["scale_drift"], cfg["clutter"], cfg["seed"],
    )
    write_run_config(cfg["out"], "run_config.txt", cfg)
    return 0


def cmd_train(args) -> int:
    defaults = dict(
        data=None, out=None, mode="ig", epochs=40, steps=16, batch=8,
        lr0=0.005, lr1=0.00005, momentum=0.9, clip_grad_norm=1.0, seed=0,
        k=5, alpha=0.3, beta=10.0, max_gap=10,
    )
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "out": args.out, "mode": args.mode,
        "epochs": args.epochs, "steps": args.steps, "batch": args.batch,
        "lr0": args.lr0, "lr1": args.lr1, "momentum": args.momentum,
        "clip_grad_norm": args.clip_grad_norm, "seed": args.seed,
        "k": args.k, "alpha": args.alpha, "beta": args.beta,
        "max_gap": args.max_gap,
    })
    if cfg["data"] is None or cfg["out"] is None:
        raise ConfigError("--data and --out are required")
    dataset = D.Dataset(cfg["data"])
    tc = TrainConfig(
        mode=cfg["mode"], epochs=cfg["epochs"], steps_per_epoch=cfg["steps"],
        batch_size=cfg["batch"], lr_start=cfg["lr0"], lr_end=cfg["lr1"],
        momentum=cfg["momentum"], clip_grad_norm=cfg["clip_grad_norm"],
        seed=cfg["seed"], max_gap=cfg["max_gap"], K=cfg["k"],
        alpha=cfg["alpha"], beta=cfg["beta"],
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_suffix(out.suffix + ".log")
    with open(log_path, "w") as log:
        params = train(dataset, tc, log_file=log)
    params.save(out)
    write_run_config(out.parent, out.name + ".run_config.txt", cfg)
    return 0


def cmd_track(args) -> int:
    defaults = dict(
        model=None, sequence=None, out=None, mode="ig", penalties=None,
        penalty_k=0.055, window_influence=0.42, alpha=0.3, k=5, beta=10.0,
        iou_module="on", nms="off",
    )
    cfg = resolve_config(defaults, args.config, {
        "model": args.model, "sequence": args.sequence, "out": args.out,
        "mode": args.mode, "penalties": args.penalties,
        "penalty_k": args.penalty_k, "window_influence": args.window_influence,
        "alpha": args.alpha, "k": args.k, "beta": args.beta,
        "iou_module": args.iou_module, "nms": args.nms,
    })
    for key in ("model", "sequence", "out"):
        if cfg[key] is None:
            raise ConfigError(f"--{key} is required")
    model = ParamStore.load(cfg["model"])
    seq = D.load_sequence(cfg["sequence"])
    penalties = None if cfg["penalties"] is None else cfg["penalties"] == "on"
    tcfg = default_config(
        cfg["mode"], penalties=penalties, penalty_k=cfg["penalty_k"],
        window_influence=cfg["window_influence"], alpha=cfg["alpha"],
        K=cfg["k"], beta=cfg["beta"], use_iou_module=cfg["iou_module"] == "on",
        nms=cfg["nms"] == "on",
    )
    boxes = track_sequence(model, seq, cfg["mode"], tcfg)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv_boxes(out, boxes)
    write_run_config(out.parent, out.name + ".run_config.txt", cfg)
    return 0


def _vot_from_files(pred: list[Box], gt: list[Box], reinit_gap=5, burn_in=10):
    """Supervised-protocol accounting replayed over a static prediction
    file: failures where overlap hits zero, 5 skipped frames, 10-frame
    accuracy burn-in. (True re-initialization needs the model; this replay
    keeps the bookkeeping comparable.)"""
    n = len(gt)
    overlaps = np.full(n, np.nan)
    curve = np.zeros(n)
    failures = 0
    first_failure = None
    t = 1
    exclude_until = 0
    while t < n:
        ov = iou(pred[t], gt[t])
        if ov == 0.0:
            failures += 1
            if first_failure is None:
                first_failure = t
            reinit = t + reinit_gap
            if reinit >= n:
                break
            exclude_until = reinit + burn_in
            t = reinit + 1
            continue
        if t >= exclude_until:
            overlaps[t] = ov
        if first_failure is None:
            curve[t] = ov
        t += 1
    return overlaps, failures, curve


def cmd_eval(args) -> int:
    defaults = dict(pred=None, gt=None, protocol="got", out=None, threshold=20.0)
    cfg = resolve_config(defaults, args.config, {
        "pred": args.pred, "gt": args.gt, "protocol": args.protocol,
        "out": args.out, "threshold": args.threshold,
    })
    for key in ("pred", "gt"):
        if cfg[key] is None:
            raise ConfigError(f"--{key} is required")
    pred = _read_csv_boxes(cfg["pred"])
    gt = _read_csv_boxes(cfg["gt"])
    if len(pred) != len(gt):
        raise ConfigError(f"length mismatch: {len(pred)} predictions vs {len(gt)} gt boxes")

    if cfg["protocol"] == "got":
        ao, sr50, sr75 = E.got_metrics(pred, gt)
        values = {
            "ao": ao, "sr50": sr50, "sr75": sr75,
            "precision20": E.precision_center(pred, gt, cfg["threshold"]),
        }
    elif cfg["protocol"] == "vot":
        overlaps, failures, curve = _vot_from_files(pred, gt)
        values = {
            "accuracy": E.accuracy(overlaps),
            "robustness": float(failures),
            "robustness_per100": 100.0 * failures / len(gt),
            "eao_approx": E.eao_approx([curve]),
        }
    else:
        raise ConfigError(f"unknown protocol {cfg['protocol']}")

    text = E.format_report(values)
    sys.stdout.write(text)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        E.write_kv(str(out) + ".kv", values)
        write_run_config(out.parent, out.name + ".run_config.txt", cfg)
    return 0


def cmd_gradcheck(args) -> int:
    defaults = dict(seed=3, tolerance=1e-3)
    cfg = resolve_config(defaults, args.config, {"seed": args.seed, "tolerance": args.tolerance})
    passed, errors = run_gradcheck(seed=cfg["seed"], tolerance=cfg["tolerance"])
    for name, err in errors.items():
        print(f"{name:16s} max relative error {err:.3e}")
    print("PASS" if passed else "FAIL")
    return 0 if passed else 1


def _mode_metrics(model, sequences, mode, tcfg) -> dict[str, float]:
    """GOT one-pass + VOT supervised metrics over a list of sequences."""
    ao_l, sr50_l, sr75_l, prec_l = [], [], [], []
    acc_l, curves = [], []
    failures_total = 0
    frames_total = 0
    for seq in sequences:
        pred = track_sequence(model, seq, mode, tcfg)
        ao, sr50, sr75 = E.got_metrics(pred, seq.gt)
        ao_l.append(ao)
        sr50_l.append(sr50)
        sr75_l.append(sr75)
        prec_l.append(E.precision_center(pred, seq.gt))

        def init_fn(t, seq=seq):
            return track_init(model, seq.frames[t], seq.gt[t], mode, tcfg)

        def step_fn(state, t, seq=seq):
            return track_frame(state, seq.frames[t])

        run = E.vot_run(seq, init_fn, step_fn)
        acc_l.append(E.accuracy(run.overlaps))
        curves.append(run.curve)
        failures_total += run.failures
        frames_total += len(seq.gt)
    return {
        "ao": float(np.mean(ao_l)),
        "sr50": float(np.mean(sr50_l)),
        "sr75": float(np.mean(sr75_l)),
        "accuracy": float(np.mean(acc_l)),
        "robustness": float(failures_total),
        "eao_approx": E.eao_approx(curves),
        "precision20": float(np.mean(prec_l)),
    }


COMPARE_METRICS = ("ao", "sr50", "sr75", "accuracy", "robustness", "eao_approx", "precision20")
# robustness counts failures: improvement is a reduction
LOWER_IS_BETTER = ("robustness",)


def compare_table(per_seed: dict[int, tuple[dict, dict]]) -> str:
    """Three-column table (base, proposed, relative improvement) with
    mean +/- half-range over seeds."""
    lines = [f"{'metric':12s} {'base':>18s} {'proposed':>18s} {'improvement':>12s}"]
    for metric in COMPARE_METRICS:
        base = np.array([per_seed[s][0][metric] for s in per_seed])
        prop = np.array([per_seed[s][1][metric] for s in per_seed])
        if metric in LOWER_IS_BETTER:
            imp = (base.mean() - prop.mean()) / base.mean() if base.mean() != 0 else 0.0
        else:
            imp = (prop.mean() - base.mean()) / base.mean() if base.mean() != 0 else 0.0

        def fmt(v):
            return f"{v.mean():.4f}±{(v.max() - v.min()) / 2:.4f}"

        lines.append(f"{metric:12s} {fmt(base):>18s} {fmt(prop):>18s} {imp:>+11.1%}")
    return "\n".join(lines) + "\n"


def run_compare(
    data_dir, holdout_dir, seeds, out_path, epochs=40, steps=16, model_dir=None
) -> dict[int, tuple[dict, dict]]:
    dataset = D.Dataset(data_dir)
    holdout = [D.load_sequence(p) for p in D.list_sequences(holdout_dir)]
    per_seed: dict[int, tuple[dict, dict]] = {}
    model_dir = Path(model_dir) if model_dir else Path(out_path).parent
    model_dir.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        results = []
        for mode in ("base", "ig"):
            tc = TrainConfig(mode=mode, epochs=epochs, steps_per_epoch=steps, seed=seed)
            params = train(dataset, tc)
            params.save(model_dir / f"{mode}_seed{seed}.igt")
            tcfg = default_config(mode)
            results.append(_mode_metrics(params, holdout, mode, tcfg))
        per_seed[seed] = (results[0], results[1])
    table = compare_table(per_seed)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table)
    sys.stdout.write(table)
    return per_seed


def cmd_compare(args) -> int:
    defaults = dict(
        data=None, holdout=None, seeds="1,2,3", out=None, epochs=40, steps=16,
    )
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "holdout": args.holdout, "seeds": args.seeds,
        "out": args.out, "epochs": args.epochs, "steps": args.steps,
    })
    for key in ("data", "holdout", "out"):
        if cfg[key] is None:
            raise ConfigError(f"--{key} is required")
    seeds = [int(s) for s in str(cfg["seeds"]).split(",") if s]
    run_compare(cfg["data"], cfg["holdout"], seeds, cfg["out"], cfg["epochs"], cfg["steps"])
    write_run_config(Path(cfg["out"]).parent, Path(cfg["out"]).name + ".run_config.txt", cfg)
    return 0


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="igtrack")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out")
    g.add_argument("--sequences", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--motion", choices=D.MOTION_KINDS)
    g.add_argument("--scale-drift", dest="scale_drift", type=float)
    g.add_argument("--clutter", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--mode", choices=("base", "ig"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--lr1", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--clip-grad-norm", dest="clip_grad_norm", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--k", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--max-gap", dest="max_gap", type=int)
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="track one sequence")
    k.add_argument("--model")
    k.add_argument("--sequence")
    k.add_argument("--out")
    k.add_argument("--mode", choices=("base", "ig"))
    k.add_argument("--penalties", choices=("on", "off"))
    k.add_argument("--penalty-k", dest="penalty_k", type=float)
    k.add_argument("--window-influence", dest="window_influence", type=float)
    k.add_argument("--alpha", type=float)
    k.add_argument("--k", type=int)
    k.add_argument("--beta", type=float)
    k.add_argument("--iou-module", dest="iou_module", choices=("on", "off"))
    k.add_argument("--nms", choices=("on", "off"))
    k.add_argument("--config")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="evaluate predictions against ground truth")
    e.add_argument("--pred")
    e.add_argument("--gt")
    e.add_argument("--protocol", choices=("vot", "got"))
    e.add_argument("--out")
    e.add_argument("--threshold", type=float)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--seed", type=int)
    c.add_argument("--tolerance", type=float)
    c.add_argument("--config")
    c.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("compare", help="A/B base vs ig over seeds")
    m.add_argument("--data")
    m.add_argument("--holdout")
    m.add_argument("--seeds")
    m.add_argument("--out")
    m.add_argument("--epochs", type=int)
    m.add_argument("--steps", type=int)
    m.add_argument("--config")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
