"""Command line front end: gen-data, train, eval, curve, report."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import metrics, synth
from .checkpoint import (CheckpointFormatError, build_models_from_checkpoint,
                         load_checkpoint)
from .config import ConfigError, RunConfig
from .models import SegmentationModel, ShapeDiscriminator, segment_forward
from .tensor import Tensor, no_grad, sigmoid
from .train import binarize, format_log_rows, train

THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def _eval_workers() -> int:
    raw = os.environ.get("ASLAB_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n else min(4, os.cpu_count() or 1)


def _predict_prob(model, sample) -> np.ndarray:
    with no_grad():
        prob = sigmoid(segment_forward(model, Tensor(sample.image[None])))
    return prob.data[0, 0]


def cmd_gen_data(args) -> int:
    cfg = RunConfig.load(args.config).scene_config()
    samples = synth.generate_dataset(cfg, args.n, args.seed)
    synth.write_dataset(samples, args.out, cfg)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "train.epochs": args.epochs, "train.seed": args.seed,
        "train.alpha": args.alpha, "train.beta": args.beta,
        "train.batch_size": args.batch_size,
    }
    if args.no_adversarial:
        overrides["train.adversarial"] = False
        overrides["train.beta"] = 0.0
    run = RunConfig.load(args.config, overrides)
    tcfg = run.train_config()

    if not os.path.isdir(args.data):
        print(f"error: dataset directory not found: {args.data}",
              file=sys.stderr)
        return 1
    dataset = synth.read_dataset(args.data)

    rng = np.random.default_rng(tcfg.seed)
    model = SegmentationModel(run.model_config(), use_sr=run["model.use_sr"],
                              rng=rng)
    disc = None
    if tcfg.adversarial:
        disc = ShapeDiscriminator(widths=run["model.sd_widths"], rng=rng)

    os.makedirs(args.out, exist_ok=True)
    _, rows = train(model, disc, dataset, tcfg, out_dir=args.out)
    log_path = os.path.join(args.out, "train_log.csv")
    with open(log_path, "w") as f:
        f.write(format_log_rows(rows))
    print(f"trained {tcfg.epochs} epochs; checkpoints and {log_path} written")
    return 0


def _load_eval_inputs(args):
    if not os.path.isdir(args.data):
        print(f"error: dataset directory not found: {args.data}",
              file=sys.stderr)
        return None
    dataset = synth.read_dataset(args.data)
    if args.pred_from_labels:
        return dataset, None
    if not os.path.isfile(args.checkpoint):
        print(f"error: checkpoint not found: {args.checkpoint}",
              file=sys.stderr)
        return None
    model, _ = build_models_from_checkpoint(load_checkpoint(args.checkpoint))
    return dataset, model


def cmd_eval(args) -> int:
    loaded = _load_eval_inputs(args)
    if loaded is None:
        return 1
    dataset, model = loaded

    def one(i_sample):
        i, sample = i_sample
        if model is None:
            prob = sample.label.astype(np.float64)
        else:
            prob = _predict_prob(model, sample)
        return f"img_{i:05d}", metrics.evaluate_pair(prob, sample.label,
                                                     args.threshold)

    with ThreadPoolExecutor(max_workers=_eval_workers()) as pool:
        named = list(pool.map(one, enumerate(dataset)))
    csv_text = metrics.reports_to_csv(named)
    with open(args.out, "w") as f:
        f.write(csv_text)
    print(csv_text.strip().splitlines()[-1])
    return 0


def cmd_curve(args) -> int:
    loaded = _load_eval_inputs(args)
    if loaded is None:
        return 1
    dataset, model = loaded
    total = np.zeros((len(THRESHOLDS), 4), dtype=np.int64)
    for sample in dataset:
        prob = sample.label.astype(np.float64) if model is None \
            else _predict_prob(model, sample)
        for k, t in enumerate(THRESHOLDS):
            total[k] += metrics.confusion_counts(binarize(prob, t),
                                                 sample.label)
    oas = [metrics.pixel_metrics(tuple(row)).oa for row in total]

    lines = ["threshold,oa"]
    lines += [f"{t:.1f},{oa:.10g}" for t, oa in zip(THRESHOLDS, oas)]
    with open(args.out_csv, "w") as f:
        f.write("\n".join(lines) + "\n")
    if args.out_png:
        _plot_curve(THRESHOLDS, oas, args.out_png)
    std = float(np.std(oas))
    print(f"oa_std {std:.10g}")
    return 0


def _plot_curve(ts, oas, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ts, oas, marker="o")
    ax.set_xlabel("binarization threshold")
    ax.set_ylabel("overall accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


REPORT_COLUMNS = ("oa", "f1", "iou", "mr", "e_curv", "e_shape")


def _read_total_row(path):
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    header = lines[0].split(",")
    if header != metrics.CSV_HEADER.split(","):
        raise ValueError(f"{path}: column mismatch, got {lines[0]!r}")
    total = next((line for line in lines[1:] if line.startswith("TOTAL,")),
                 None)
    if total is None:
        raise ValueError(f"{path}: missing TOTAL row")
    vals = dict(zip(header, total.split(",")))
    return {c: (float(vals[c]) if vals[c] else None) for c in REPORT_COLUMNS}


def cmd_report(args) -> int:
    rows = []
    for path in args.csvs:
        name = os.path.splitext(os.path.basename(path))[0]
        rows.append((name, _read_total_row(path)))

    def fmt(v):
        return "-" if v is None else f"{v:.4f}"

    lines = ["| method | " + " | ".join(c.upper() for c in REPORT_COLUMNS)
             + " |",
             "|---" * (len(REPORT_COLUMNS) + 1) + "|"]
    for name, vals in rows:
        lines.append(f"| {name} | "
                     + " | ".join(fmt(vals[c]) for c in REPORT_COLUMNS) + " |")
    if len(rows) >= 2:
        base = rows[0][1]
        for name, vals in rows[1:]:
            deltas = [None if vals[c] is None or base[c] is None
                      else vals[c] - base[c] for c in REPORT_COLUMNS]
            lines.append(f"| {name} - {rows[0][0]} | "
                         + " | ".join(fmt(d) for d in deltas) + " |")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aslab",
        description="Adversarial shape learning on synthetic building scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the segmenter (and discriminator)")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--no-adversarial", action="store_true",
                   help="train the pixel-loss baseline without the "
                        "discriminator (beta = 0)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--pred-from-labels", action="store_true",
                   help="score the labels against themselves (sanity bypass)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("curve", help="overall accuracy vs threshold curve")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-png", default=None)
    p.add_argument("--pred-from-labels", action="store_true")
    p.set_defaults(fn=cmd_curve)

    p = sub.add_parser("report", help="markdown comparison of metric CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen-data" and args.n < 1:
        parser.error("--n must be >= 1")
    if args.command in ("eval", "curve") and not args.pred_from_labels \
            and not args.checkpoint:
        parser.error("--checkpoint is required unless --pred-from-labels")
    try:
        return args.fn(args)
    except (ConfigError, CheckpointFormatError, synth.GenerationError,
            OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
