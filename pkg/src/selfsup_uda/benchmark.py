"""Desk-scale adaptation benchmark.

Generates the brightness/blend digit benchmark, trains source-only and
rotation-adapted models over several seeds, audits every epoch against the
target sidecar, and writes one ``results.json`` with the raw numbers.
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .checkpoint import load_checkpoint
from .evaluate import accuracy
from .experiment import (ExperimentConfig, SynthConfig, load_eval_labels, load_test_images,
                         run_training, synthesize)
from .select import combine, early_stop

log = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    seeds: tuple = (0, 1, 2)
    synth: SynthConfig = field(default_factory=SynthConfig)
    encoder: dict = field(default_factory=lambda: {"in_channels": 3, "widths": [16, 32, 64],
                                                   "feature_dim": 64, "residual": False})
    # lr 0.1 occasionally kills every ReLU of this norm-free encoder; 0.03 trains all seeds
    train: dict = field(default_factory=lambda: {"epochs": 30, "batch_size": 128, "lr": 0.03})
    val_fraction: float = 0.1
    joint_step: bool = True  # paired joint_step runs for the step-mode comparison
    rerun_seed: int | None = 0  # repeat this seed's adapted run to check determinism

    def experiment(self, data_dir, seed: int, tasks: list, mode: str = "per_task_loop") -> ExperimentConfig:
        return ExperimentConfig(seed=seed, data_dir=str(data_dir), synth=self.synth,
                                encoder=dict(self.encoder), tasks=list(tasks),
                                train={**self.train, "mode": mode}, val_fraction=self.val_fraction)


def _files_identical(a: Path, b: Path) -> bool:
    names_a = sorted(p.relative_to(a).as_posix() for p in a.rglob("*") if p.is_file())
    names_b = sorted(p.relative_to(b).as_posix() for p in b.rglob("*") if p.is_file())
    return names_a == names_b and all((a / n).read_bytes() == (b / n).read_bytes() for n in names_a)


def audit_run(run_dir: Path, data_dir: Path, history) -> dict:
    """Per-epoch target and final source accuracy of one run. Reads the sidecar."""
    target_x = load_test_images(data_dir, "target")
    target_y = load_eval_labels(data_dir, "target")
    source_x = load_test_images(data_dir, "source")
    source_y = load_eval_labels(data_dir, "source")
    target_acc = []
    for ckpt in history.checkpoints:
        params, _, _ = load_checkpoint(run_dir / ckpt)
        target_acc.append(accuracy(params, target_x, target_y).accuracy)
    final, _, _ = load_checkpoint(run_dir / history.checkpoints[-1])
    u = combine(history.v, history.w)
    return {
        "v": list(history.v),
        "w": list(history.w),
        "u": [float(x) for x in u],
        "selected_epoch": early_stop(u),
        "target_acc": target_acc,
        "source_acc": accuracy(final, source_x, source_y).accuracy,
    }


def _train(cfg: BenchmarkConfig, data_dir: Path, out: Path, seed: int, tasks, mode="per_task_loop") -> dict:
    exp = cfg.experiment(data_dir, seed, tasks, mode)
    t0 = time.perf_counter()
    _, history = run_training(exp, out)
    seconds = time.perf_counter() - t0
    result = audit_run(out, data_dir, history)
    result["seconds"] = seconds
    log.info("%s: target %.4f source %.4f in %.0fs", out.name, result["target_acc"][-1],
             result["source_acc"], seconds)
    return result


def run_benchmark(cfg: BenchmarkConfig, out_dir) -> dict:
    out = Path(out_dir)
    data_dir = out / "data"
    synthesize(cfg.synth, data_dir)
    results = {"config": asdict(cfg), "runs": {}}
    runs = results["runs"]
    for seed in cfg.seeds:
        runs[f"baseline_s{seed}"] = _train(cfg, data_dir, out / f"baseline_s{seed}", seed, ["none"])
        runs[f"adapted_s{seed}"] = _train(cfg, data_dir, out / f"adapted_s{seed}", seed, ["rotation"])
    if cfg.joint_step:
        for seed in cfg.seeds:
            runs[f"joint_s{seed}"] = _train(cfg, data_dir, out / f"joint_s{seed}", seed, ["rotation"],
                                            "joint_step")
    if cfg.rerun_seed is not None:
        s = cfg.rerun_seed
        runs[f"rerun_s{s}"] = _train(cfg, data_dir, out / f"rerun_s{s}", s, ["rotation"])
        results["rerun_identical"] = _files_identical(out / f"adapted_s{s}", out / f"rerun_s{s}")
    (out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return results


def summarize(results: dict) -> str:
    lines = []
    for name, r in results["runs"].items():
        t = r["selected_epoch"]
        lines.append(f"{name:14s} target {r['target_acc'][-1]:.4f}  source {r['source_acc']:.4f}  "
                     f"v {r['v'][0]:.3f}->{r['v'][-1]:.3f}  selected epoch {t} "
                     f"({r['target_acc'][t]:.4f}, best {max(r['target_acc']):.4f})  {r['seconds']:.0f}s")
    return "\n".join(lines)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="run the desk-scale adaptation benchmark")
    p.add_argument("--out", default="runs/benchmark")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-joint", action="store_true")
    p.add_argument("--no-rerun", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = BenchmarkConfig(seeds=tuple(int(s) for s in args.seeds.split(",")),
                          joint_step=not args.no_joint,
                          rerun_seed=None if args.no_rerun else int(args.seeds.split(",")[0]))
    if args.epochs:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    print(summarize(run_benchmark(cfg, args.out)))
    return 0
