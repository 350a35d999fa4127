"""Joint training of the main classifier and the self-supervised heads."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data.sampling import balanced_epoch, balanced_epoch_length, source_epoch
from .data.sets import DomainPair
from .gradcore import (ComputationTape, NonFiniteError, OptimizerState, Tensor, add, backward,
                       sgd_step, softmax_cross_entropy, zero_grads)
from .model import (MAIN_TASK, ConfigError, EncoderConfig, HeadConfig, ModelParams, encode,
                    head_forward, init_model, predict)
from .select import mean_distance
from .selfsup import SOURCE, TARGET, SelfSupBatch, TaskSpec, make_batch, task_loss

log = logging.getLogger(__name__)

MODES = ("per_task_loop", "joint_step")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, step: int, term: str, cause: Exception | None = None):
        super().__init__(f"training diverged at epoch {epoch}, step {step}, term {term!r}: {cause}")
        self.epoch, self.step, self.term = epoch, step, term


class BalanceError(ValueError):
    pass


@dataclass
class TrainConfig:
    tasks: tuple = ()
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple = ((15, 0.1), (23, 0.1))
    mode: str = "per_task_loop"
    seed: int = 0
    eval_batch: int = 500
    dtype: str = "float32"

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.milestones = tuple(tuple(m) for m in self.milestones)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch size must be even")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate task ids")

    def optimizer(self) -> OptimizerState:
        return OptimizerState(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                              milestones=list(self.milestones))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [asdict(t) for t in self.tasks]
        d["milestones"] = [list(m) for m in self.milestones]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["tasks"] = tuple(TaskSpec(**t) for t in d.get("tasks", ()))
        return cls(**d)


@dataclass
class TrainingLog:
    v: list = field(default_factory=list)
    w: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    losses: dict = field(default_factory=dict)  # term name -> per-epoch mean train loss
    checkpoints: list = field(default_factory=list)
    steps: list = field(default_factory=list)  # optimizer steps per epoch

    def __len__(self) -> int:
        return len(self.v)

    def record(self, v: float, w: float, lr: float, losses: dict, steps: int, checkpoint: str = "") -> None:
        self.v.append(float(v))
        self.w.append(float(w))
        self.lr.append(float(lr))
        for name, val in losses.items():
            self.losses.setdefault(name, []).append(float(val))
        self.steps.append(int(steps))
        self.checkpoints.append(checkpoint)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingLog":
        return cls(**d)

    def write_csv(self, path) -> None:
        names = sorted(self.losses)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epoch", "v", "w", "lr", *[f"loss_{n}" for n in names], "checkpoint"])
            for t in range(len(self)):
                wr.writerow([t, repr(self.v[t]), repr(self.w[t]), repr(self.lr[t]),
                             *[repr(self.losses[n][t]) for n in names], self.checkpoints[t]])

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        out = cls()
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty training log")
        try:
            for expected, row in enumerate(rows):
                if int(row["epoch"]) != expected:
                    raise ValueError(f"epoch column out of order at row {expected}")
                losses = {k[len("loss_"):]: float(v) for k, v in row.items() if k.startswith("loss_")}
                out.record(float(row["v"]), float(row["w"]), float(row.get("lr") or "nan"), losses, 0,
                           row.get("checkpoint") or "")
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed training log ({exc})") from exc
        return out


def build_heads(tasks, num_classes: int) -> list:
    return [HeadConfig(MAIN_TASK, num_classes)] + [t.head_config() for t in tasks]


def main_loss(params: ModelParams, images: np.ndarray, labels: np.ndarray) -> Tensor:
    return softmax_cross_entropy(head_forward(params, MAIN_TASK, encode(params, images, train=True)), labels)


def selfsup_loss(params: ModelParams, task: TaskSpec, batch: SelfSupBatch) -> Tensor:
    """Task loss on one balanced batch; rejects batches where one domain outweighs the other."""
    n_src = int(np.sum(batch.provenance == SOURCE))
    n_tgt = int(np.sum(batch.provenance == TARGET))
    if n_src != n_tgt or n_src == 0:
        raise BalanceError(f"self-supervised batch has {n_src} source and {n_tgt} target rows")
    feats = encode(params, batch.images, train=True)
    return task_loss(task, head_forward(params, task.id, feats), batch.labels)


def selfsup_batch(task: TaskSpec, data: DomainPair, idx, rng: np.random.Generator) -> SelfSupBatch:
    images = np.concatenate([data.source_train.images[idx.source], data.target_train.images[idx.target]])
    return make_batch(task, images, rng, idx.provenance)


def slots_per_epoch(data: DomainPair, cfg: TrainConfig) -> int:
    if cfg.tasks:
        return balanced_epoch_length(len(data.source_train), len(data.target_train), cfg.batch_size)
    return math.ceil(len(data.source_train) / cfg.batch_size)


def epoch_rngs(cfg: TrainConfig, epoch: int) -> dict:
    """Independent generators per stream, derived from (seed, epoch) so resuming needs no RNG state."""
    rngs = {"source": np.random.default_rng((cfg.seed, epoch, 0))}
    for t in cfg.tasks:
        rngs[f"balance{t.id}"] = np.random.default_rng((cfg.seed, epoch, 1, t.id))
        rngs[f"transform{t.id}"] = np.random.default_rng((cfg.seed, epoch, 2, t.id))
    return rngs


def _step(params: dict, loss_fn, opt: OptimizerState) -> float:
    with ComputationTape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    sgd_step(params, opt)
    zero_grads(params)
    return loss.item()


def train_epoch(params: ModelParams, opt: OptimizerState, data: DomainPair, cfg: TrainConfig,
                epoch: int) -> dict:
    """One epoch. Returns mean train loss per term plus the optimizer step count."""
    rngs = epoch_rngs(cfg, epoch)
    steps = slots_per_epoch(data, cfg)
    src = source_epoch(len(data.source_train), cfg.batch_size, steps, rngs["source"])
    balanced = {t.id: balanced_epoch(len(data.source_train), len(data.target_train), cfg.batch_size,
                                     rngs[f"balance{t.id}"]) for t in cfg.tasks}
    enc = params.encoder_tensors()
    totals = {"main": 0.0, **{t.kind: 0.0 for t in cfg.tasks}}
    n_updates = 0

    for step in range(steps):
        batches = {t.id: selfsup_batch(t, data, balanced[t.id][step], rngs[f"transform{t.id}"])
                   for t in cfg.tasks}
        x0 = data.source_train.images[src[step]]
        y0 = data.source_train.labels[src[step]]
        term = "main"
        try:
            if cfg.mode == "per_task_loop":
                for t in cfg.tasks:
                    term = t.kind
                    totals[t.kind] += _step({**enc, **params.head_tensors(t.id)},
                                            lambda: selfsup_loss(params, t, batches[t.id]), opt)
                    n_updates += 1
                term = "main"
                totals["main"] += _step({**enc, **params.head_tensors(MAIN_TASK)},
                                        lambda: main_loss(params, x0, y0), opt)
                n_updates += 1
            else:
                term = "joint"
                parts = {}

                def objective():
                    total = parts["main"] = main_loss(params, x0, y0)
                    for t in cfg.tasks:
                        parts[t.kind] = selfsup_loss(params, t, batches[t.id])
                        total = add(total, parts[t.kind])
                    return total

                _step(params.named_tensors(), objective, opt)
                n_updates += 1
                for name, val in parts.items():
                    totals[name] += val.item()
        except NonFiniteError as exc:
            raise DivergenceError(epoch, step, term, exc) from exc
        for name in totals:
            if not np.isfinite(totals[name]):
                raise DivergenceError(epoch, step, name)

    out = {name: val / steps for name, val in totals.items()}
    out["steps"] = n_updates
    return out


def source_error(params: ModelParams, images: np.ndarray, labels: np.ndarray, batch_size: int = 500) -> float:
    return float(np.mean(predict(params, images, batch_size) != labels))


def fit(data: DomainPair, cfg: TrainConfig, encoder_cfg: EncoderConfig, out_dir=None,
        resume_from=None, stop_after: int | None = None) -> tuple:
    """Train for ``cfg.epochs`` epochs; returns (params, TrainingLog).

    After every epoch records the mean distance on the unlabeled validation
    splits and the source validation error, and writes a checkpoint when
    ``out_dir`` is given. ``stop_after`` ends the run early (used to test resuming).
    """
    dtype = np.dtype(cfg.dtype)
    if resume_from is not None:
        params, meta, opt = load_checkpoint(resume_from)
        start = meta["epoch"] + 1
        history = TrainingLog.from_dict(meta["log"])
    else:
        params = init_model(encoder_cfg, build_heads(cfg.tasks, data.num_classes), cfg.seed, dtype)
        opt = cfg.optimizer()
        start = 0
        history = TrainingLog()

    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    s_val = data.source_val
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start, last):
        opt.set_epoch(epoch)
        metrics = train_epoch(params, opt, data, cfg, epoch)
        steps = metrics.pop("steps")
        v = mean_distance(params, s_val.images, data.target_val.images, cfg.eval_batch)
        w = source_error(params, s_val.images, s_val.labels, cfg.eval_batch)
        ckpt = ""
        if ckpt_dir is not None:
            ckpt = f"checkpoints/epoch_{epoch:03d}.ckpt"
        history.record(v, w, opt.lr, metrics, steps, ckpt)
        if ckpt_dir is not None:
            meta = {"epoch": epoch, "train": cfg.to_dict(), "log": history.to_dict()}
            save_checkpoint(Path(out_dir) / ckpt, params, meta, opt)
        log.info("epoch %d  v=%.4f  w=%.4f  lr=%g  %s", epoch, v, w, opt.lr,
                 "  ".join(f"{k}={val:.4f}" for k, val in metrics.items()))
    if out_dir is not None:
        history.write_csv(Path(out_dir) / "log.csv")
    return params, history
