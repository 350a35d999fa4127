"""Momentum SGD with coupled weight decay and a milestone learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import UsageError


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: list = field(default_factory=list)  # [(epoch, factor), ...]
    buffers: dict = field(default_factory=dict)
    base_lr: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        self.milestones = sorted((int(e), float(f)) for e, f in self.milestones)
        if self.base_lr is None:
            self.base_lr = self.lr

    def lr_at(self, epoch: int) -> float:
        """Rate in effect during 0-based ``epoch``: base times every milestone factor with e <= epoch."""
        lr = self.base_lr
        for e, f in self.milestones:
            if epoch >= e:
                lr *= f
        return lr

    def set_epoch(self, epoch: int) -> None:
        self.lr = self.lr_at(epoch)


def sgd_step(params: dict, state: OptimizerState) -> None:
    """In-place update of each parameter tensor from its ``.grad``.

    g = grad + wd * p;  buf = momentum * buf + g;  p -= lr * buf
    """
    for name, p in params.items():
        if p.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient")
        g = p.grad + state.weight_decay * p.data if state.weight_decay else p.grad
        if state.momentum:
            buf = state.buffers.get(name)
            if buf is None:
                buf = np.zeros_like(p.data)
                state.buffers[name] = buf
            buf *= state.momentum
            buf += g
            g = buf
        p.data -= (state.lr * g).astype(p.dtype, copy=False)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None
