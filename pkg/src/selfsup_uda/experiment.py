"""Experiment configuration, on-disk dataset layout, and run orchestration."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (LabeledSet, ShiftSpec, apply_shift, load_idx, make_domain_pair,
                   render_digits, save_idx, to_channels)
from .data.idx import read_labels, write_idx
from .evaluate import Sidecar
from .model import ConfigError, EncoderConfig
from .selfsup import TaskSpec
from .train import TrainConfig, fit

DATA_ROOT_ENV = "SELFSUP_UDA_DATA"

# file layout of a dataset directory
FILES = {
    "source_train": ("source-train-images.idx", "source-train-labels.idx"),
    "source_test": ("source-test-images.idx", "source-test-labels.idx"),
    "target_train": ("target-train-images.idx", None),
    "target_test": ("target-test-images.idx", None),
}
SIDECAR = "sidecar/target-test-labels.idx"
MANIFEST = "manifest.json"


@dataclass
class SynthConfig:
    n_source: int = 2000
    n_target: int = 2000
    n_test: int = 1000
    size: int = 16
    channels: int = 3
    shifts: list = field(default_factory=lambda: [
        {"kind": "brightness_scale", "alpha": 0.4},
        {"kind": "channel_blend", "beta": 0.3},
    ])
    seed: int = 0

    def shift_specs(self) -> list:
        return [ShiftSpec(**s) for s in self.shifts]


@dataclass
class ExperimentConfig:
    seed: int = 0
    data_dir: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    encoder: dict = field(default_factory=lambda: {"in_channels": 3, "widths": [16, 32, 64],
                                                   "feature_dim": 64, "residual": False})
    tasks: list = field(default_factory=lambda: ["rotation"])
    train: dict = field(default_factory=lambda: {"lr": 0.03})  # TrainConfig overrides except tasks/seed
    val_fraction: float = 0.1
    out: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "synth" in d:
            d["synth"] = SynthConfig(**d["synth"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def encoder_config(self) -> EncoderConfig:
        e = dict(self.encoder)
        return EncoderConfig(e["in_channels"], tuple(e["widths"]), e["feature_dim"], e.get("residual", False))

    def task_specs(self) -> tuple:
        names = [t for t in self.tasks if t != "none"]
        aliases = {"flip": "vflip"}
        return tuple(TaskSpec(i + 1, aliases.get(t, t)) for i, t in enumerate(names))

    def train_config(self) -> TrainConfig:
        overrides = {k: v for k, v in self.train.items() if k not in ("tasks", "seed")}
        return TrainConfig(tasks=self.task_specs(), seed=self.seed, **overrides)

    def resolved_data_dir(self) -> Path:
        root = self.data_dir or os.environ.get(DATA_ROOT_ENV)
        if not root:
            raise ConfigError(f"no data directory: set data_dir or ${DATA_ROOT_ENV}")
        return Path(root)


def parse_tasks(text: str) -> list:
    names = [t.strip() for t in text.split(",") if t.strip()]
    allowed = {"rotation", "flip", "vflip", "loc4", "loc_regress", "none"}
    bad = [t for t in names if t not in allowed]
    if bad or ("none" in names and len(names) > 1):
        raise ConfigError(f"bad task list {text!r}; use a comma list of rotation|flip|loc4|loc_regress or none")
    return names


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def make_benchmark_sets(cfg: SynthConfig) -> dict:
    """Source digits, and a disjoint set of digits shifted into the target domain."""
    def digits(n, offset):
        s = render_digits(n, cfg.size, seed=cfg.seed * 1000 + offset)
        return LabeledSet(to_channels(s.images, cfg.channels), s.labels, s.num_classes)

    def shifted(s, offset):
        for i, spec in enumerate(cfg.shift_specs()):
            s = apply_shift(s, spec, seed=cfg.seed * 1000 + offset + 10 * i)
        return s

    return {
        "source_train": digits(cfg.n_source, 1),
        "source_test": digits(cfg.n_test, 2),
        "target_train": shifted(digits(cfg.n_target, 3), 500),
        "target_test": shifted(digits(cfg.n_test, 4), 600),
    }


def synthesize(cfg: SynthConfig, out_dir) -> dict:
    """Write the benchmark as IDX files. Target labels go only to the sidecar file."""
    out = Path(out_dir)
    (out / "sidecar").mkdir(parents=True, exist_ok=True)
    sets = make_benchmark_sets(cfg)
    for key, (img_name, lab_name) in FILES.items():
        s = sets[key]
        save_idx(out / img_name, s.images, out / lab_name if lab_name else None,
                 s.labels if lab_name else None)
    write_idx(out / SIDECAR, sets["target_test"].labels.astype(np.uint8))
    files = [name for pair in FILES.values() for name in pair if name] + [SIDECAR]
    manifest = {
        "shifts": cfg.shifts,
        "synth": asdict(cfg),
        "seed": cfg.seed,
        "checksums": {name: _sha256(out / name) for name in files},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_training_data(data_dir, val_fraction: float, seed: int):
    """DomainPair for training; never touches the sidecar."""
    d = Path(data_dir)
    for key in ("source_train", "target_train"):
        if not (d / FILES[key][0]).exists():
            raise FileNotFoundError(f"missing {d / FILES[key][0]}")
    source = load_idx(d / FILES["source_train"][0], d / FILES["source_train"][1])
    target = load_idx(d / FILES["target_train"][0])
    return make_domain_pair(source, target, val_fraction, seed)


def load_test_images(data_dir, domain: str) -> np.ndarray:
    return load_idx(Path(data_dir) / FILES[f"{domain}_test"][0]).images


def load_eval_labels(data_dir, domain: str) -> Sidecar:
    d = Path(data_dir)
    path = d / (SIDECAR if domain == "target" else FILES["source_test"][1])
    if not path.exists():
        raise FileNotFoundError(f"no evaluation labels at {path}")
    return Sidecar(read_labels(path))


def run_training(cfg: ExperimentConfig, out_dir=None, resume_from=None, stop_after=None):
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    data = load_training_data(cfg.resolved_data_dir(), cfg.val_fraction, cfg.seed)
    enc = cfg.encoder_config()
    if enc.in_channels != data.image_shape[0]:
        raise ConfigError(f"encoder expects {enc.in_channels} channels, data has {data.image_shape[0]}")
    return fit(data, cfg.train_config(), enc, out, resume_from=resume_from, stop_after=stop_after)
