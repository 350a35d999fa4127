"""Shared convolutional encoder and the per-task linear heads."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .gradcore import (BatchNormState, DimensionError, Tensor, UsageError, add, batch_norm2d,
                       conv2d, global_avg_pool, linear, max_pool2, relu)

MAIN_TASK = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    widths: tuple = (32, 64, 128)
    feature_dim: int = 128
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise ConfigError("encoder needs at least one stage")
        if self.feature_dim != self.widths[-1]:
            raise ConfigError(f"feature_dim {self.feature_dim} must equal last stage width {self.widths[-1]}")
        if not 64 <= self.feature_dim <= 512:
            warnings.warn(f"feature dim {self.feature_dim} outside the usual [64, 512] range", stacklevel=3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass(frozen=True)
class HeadConfig:
    task_id: int
    out_dim: int
    kind: str = "classification"  # or "regression"

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if self.out_dim < 1:
            raise ConfigError("head output dim must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    encoder_cfg: EncoderConfig
    heads: dict  # task id -> HeadConfig
    encoder: dict  # name -> Tensor
    head_params: dict  # task id -> {"w": Tensor, "b": Tensor}
    bn: dict = field(default_factory=dict)  # name -> BatchNormState

    @property
    def feature_dim(self) -> int:
        return self.encoder_cfg.feature_dim

    def head_tensors(self, k: int) -> dict:
        if k not in self.head_params:
            raise UsageError(f"no head registered for task {k}")
        return {f"head{k}.{n}": t for n, t in self.head_params[k].items()}

    def encoder_tensors(self) -> dict:
        return {f"enc.{n}": t for n, t in self.encoder.items()}

    def named_tensors(self) -> dict:
        out = self.encoder_tensors()
        for k in sorted(self.head_params):
            out.update(self.head_tensors(k))
        return out

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_tensors().values())

    def without_heads(self, keep=(MAIN_TASK,)) -> "ModelParams":
        return ModelParams(self.encoder_cfg, {k: h for k, h in self.heads.items() if k in keep},
                           self.encoder, {k: p for k, p in self.head_params.items() if k in keep}, self.bn)


def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_model(encoder_cfg: EncoderConfig, heads, seed: int, dtype=np.float32) -> ModelParams:
    head_map = {}
    for h in heads:
        if h.task_id in head_map:
            raise ConfigError(f"duplicate head for task {h.task_id}")
        head_map[h.task_id] = h
    if MAIN_TASK not in head_map:
        raise ConfigError("the main head (task 0) is required")

    rng = np.random.default_rng(seed)
    enc: dict = {}
    bn: dict = {}

    def conv(name, cin, cout, k):
        enc[f"{name}.w"] = _uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        enc[f"{name}.b"] = _zeros((cout,), dtype)

    def norm(name, c):
        enc[f"{name}.scale"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        enc[f"{name}.shift"] = _zeros((c,), dtype)
        bn[name] = BatchNormState.fresh(c, dtype)

    cin = encoder_cfg.in_channels
    if not encoder_cfg.residual:
        for i, w in enumerate(encoder_cfg.widths):
            conv(f"conv{i}", cin, w, 3)
            cin = w
    else:
        conv("stem", cin, encoder_cfg.widths[0], 3)
        cin = encoder_cfg.widths[0]
        for i, w in enumerate(encoder_cfg.widths):
            norm(f"block{i}.bn1", cin)
            conv(f"block{i}.conv1", cin, w, 3)
            norm(f"block{i}.bn2", w)
            conv(f"block{i}.conv2", w, w, 3)
            if cin != w:
                conv(f"block{i}.proj", cin, w, 1)
            cin = w
        norm("final_bn", cin)

    head_params = {}
    D = encoder_cfg.feature_dim
    for k in sorted(head_map):
        h = head_map[k]
        head_params[k] = {"w": _uniform(rng, (h.out_dim, D), D, dtype), "b": _zeros((h.out_dim,), dtype)}
    return ModelParams(encoder_cfg, head_map, enc, head_params, bn)


def _as_input(images, dtype) -> Tensor:
    if isinstance(images, Tensor):
        return images
    return Tensor(np.asarray(images, dtype=dtype))


def encode(params: ModelParams, images, train: bool = False) -> Tensor:
    """Features phi(x) of shape (N, feature_dim). ``train`` only matters for batch norm."""
    dtype = next(iter(params.encoder.values())).dtype
    x = _as_input(images, dtype)
    cfg = params.encoder_cfg
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected images (N, {cfg.in_channels}, H, W), got {x.shape}")
    e = params.encoder
    if not cfg.residual:
        for i in range(len(cfg.widths)):
            x = max_pool2(relu(conv2d(x, e[f"conv{i}.w"], e[f"conv{i}.b"], padding=1)))
        return global_avg_pool(x)

    def bn(name, t):
        return batch_norm2d(t, e[f"{name}.scale"], e[f"{name}.shift"], params.bn[name], train)

    x = conv2d(x, e["stem.w"], e["stem.b"], padding=1)
    for i in range(len(cfg.widths)):
        p = f"block{i}"
        h = conv2d(relu(bn(f"{p}.bn1", x)), e[f"{p}.conv1.w"], e[f"{p}.conv1.b"], padding=1)
        h = conv2d(relu(bn(f"{p}.bn2", h)), e[f"{p}.conv2.w"], e[f"{p}.conv2.b"], padding=1)
        skip = conv2d(x, e[f"{p}.proj.w"], e[f"{p}.proj.b"]) if f"{p}.proj.w" in e else x
        x = max_pool2(add(h, skip))
    return global_avg_pool(relu(bn("final_bn", x)))


def head_forward(params: ModelParams, k: int, features: Tensor) -> Tensor:
    if k not in params.head_params:
        raise UsageError(f"no head registered for task {k}")
    hp = params.head_params[k]
    return linear(features, hp["w"], hp["b"])


def predict_logits(params: ModelParams, images, batch_size: int = 500) -> np.ndarray:
    images = np.asarray(images)
    chunks = [head_forward(params, MAIN_TASK, encode(params, images[i:i + batch_size])).data
              for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, params.heads[MAIN_TASK].out_dim))


def predict(params: ModelParams, images, batch_size: int = 500) -> np.ndarray:
    """Main-task class indices; the self-supervised heads are never consulted."""
    return predict_logits(params, images, batch_size).argmax(axis=1)
