"""Command line entry point: synth, train, select, eval, report.

Exit codes: 0 success, 1 training diverged, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointVersionError, load_checkpoint
from .data import IdxFormatError
from .evaluate import EvalReport, accuracy, compare
from .experiment import (ExperimentConfig, load_eval_labels, load_test_images, parse_tasks,
                         run_training, synthesize)
from .gradcore import UsageError
from .model import ConfigError
from .select import combine, early_stop
from .train import DivergenceError, TrainingLog

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("selfsup_uda")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "tasks", None):
        cfg.tasks = parse_tasks(args.tasks)
    if getattr(args, "mode", None):
        cfg.train = {**cfg.train, "mode": args.mode}
    if getattr(args, "epochs", None) is not None:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg.synth.seed = args.seed
    out = Path(args.out or cfg.data_dir or "data")
    manifest = synthesize(cfg.synth, out)
    print(f"wrote dataset to {out} ({len(manifest['checksums'])} files)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _, history = run_training(cfg, cfg.out, resume_from=args.resume)
    print(f"trained {len(history)} epochs; log at {Path(cfg.out) / 'log.csv'}")
    return EXIT_OK


def selection_report(log_path) -> dict:
    history = TrainingLog.read_csv(log_path)
    u = combine(history.v, history.w)
    t = early_stop(u)
    ckpt = history.checkpoints[t]
    return {
        "epoch": t,
        "v": history.v[t],
        "w": history.w[t],
        "u": float(u[t]),
        "u_trace": [float(x) for x in u],
        "checkpoint": str(Path(log_path).parent / ckpt) if ckpt else "",
    }


def cmd_select(args) -> int:
    try:
        report = selection_report(args.log)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot parse training log {args.log}: {exc}") from exc
    print(f"selected epoch {report['epoch']}  u={report['u']:.6g}")
    print("u trace: " + " ".join(f"{x:.4g}" for x in report["u_trace"]))
    out = Path(args.out) if args.out else Path(args.log).with_name("selection.json")
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, meta, _ = load_checkpoint(args.checkpoint)
    data_dir = args.data or ExperimentConfig().resolved_data_dir()
    images = load_test_images(data_dir, args.domain)
    if images.shape[1] != params.encoder_cfg.in_channels:
        raise CheckpointVersionError(
            f"checkpoint expects {params.encoder_cfg.in_channels}-channel input, data has {images.shape[1]}")
    try:
        sidecar = load_eval_labels(data_dir, args.domain)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    report = accuracy(params, images, sidecar)
    stem = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(f".{args.domain}-eval")
    report.write(stem)
    print(f"{args.domain} accuracy {report.accuracy:.4f} on {report.total} images")
    if args.baseline:
        delta = compare(EvalReport.read(args.baseline), report)
        delta.write(stem.with_name(stem.name + ".delta.json"))
        print(f"delta vs baseline {delta.overall:+.4f} ({delta.improved} classes up, {delta.worsened} down)")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    history = TrainingLog.read_csv(run / "log.csv")
    u = combine(history.v, history.w)
    names = sorted(history.losses)
    target_err = None
    if args.data:
        images = load_test_images(args.data, "target")
        sidecar = load_eval_labels(args.data, "target")
        target_err = []
        for ckpt in history.checkpoints:
            params, _, _ = load_checkpoint(run / ckpt)
            target_err.append(1.0 - accuracy(params, images, sidecar).accuracy)
    out = Path(args.out) if args.out else run / "series.csv"
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        header = ["epoch", "v", "w", "u", *[f"loss_{n}" for n in names]]
        if target_err is not None:
            header.append("target_err")
        wr.writerow(header)
        for t in range(len(history)):
            row = [t, repr(history.v[t]), repr(history.w[t]), repr(float(u[t])),
                   *[repr(history.losses[n][t]) for n in names]]
            if target_err is not None:
                row.append(repr(target_err[t]))
            wr.writerow(row)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfsup-uda", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a source/target digit benchmark as IDX files")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="joint training; writes log.csv and per-epoch checkpoints")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--tasks", help="comma list of rotation|flip|loc4|loc_regress, or none")
    t.add_argument("--mode", choices=["per_task_loop", "joint_step"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--data", help="dataset directory (default: $SELFSUP_UDA_DATA)")
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("select", help="pick the early-stopping epoch from a training log")
    c.add_argument("log")
    c.add_argument("--out")
    c.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a labeled test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--domain", choices=["target", "source"], default="target")
    e.add_argument("--baseline", help="EvalReport JSON to compare against")
    e.add_argument("--out", help="output stem for the .json/.csv report")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="per-epoch series for plotting")
    r.add_argument("run")
    r.add_argument("--data", help="dataset directory; adds target error from the sidecar")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, CheckpointVersionError, IdxFormatError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
