"""Index streams for training: balanced source/target batches and plain source batches."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..model import ConfigError


@dataclass
class BalancedBatch:
    source: np.ndarray  # indices into the source set
    target: np.ndarray  # indices into the target set

    @property
    def provenance(self) -> np.ndarray:
        return np.concatenate([np.zeros(len(self.source), np.int8), np.ones(len(self.target), np.int8)])


def _cycle(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` indices from back-to-back reshuffled permutations of range(n)."""
    reps = math.ceil(count / n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def balanced_epoch_length(n_source: int, n_target: int, batch_size: int) -> int:
    return math.ceil(max(n_source, n_target) / (batch_size // 2))


def balanced_epoch(n_source: int, n_target: int, batch_size: int,
                   rng: np.random.Generator) -> list:
    """One epoch of half-source/half-target batches.

    The epoch covers the larger domain once. Each domain draws from its own
    reshuffled cycle, so the smaller one repeats (reshuffling every pass) and
    the larger one only wraps to a fresh permutation to fill the final batch.
    """
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"balanced batches need an even batch size, got {batch_size}")
    if n_source < 1 or n_target < 1:
        raise ConfigError("both domains must be nonempty")
    half = batch_size // 2
    steps = balanced_epoch_length(n_source, n_target, batch_size)
    src = _cycle(n_source, steps * half, rng).reshape(steps, half)
    tgt = _cycle(n_target, steps * half, rng).reshape(steps, half)
    return [BalancedBatch(s, t) for s, t in zip(src, tgt)]


def _count(x) -> int:
    return int(x) if isinstance(x, (int, np.integer)) else len(x)


def balanced_batches(source, target, batch_size: int, seed: int) -> Iterator[BalancedBatch]:
    """Endless stream over two sets (or their sizes); epoch ``e`` is seeded by (seed, e)."""
    n_source, n_target = _count(source), _count(target)
    epoch = 0
    while True:
        yield from balanced_epoch(n_source, n_target, batch_size, np.random.default_rng((seed, epoch)))
        epoch += 1


def source_epoch(n_source: int, batch_size: int, steps: int, rng: np.random.Generator) -> np.ndarray:
    """``steps`` full batches of labeled-source indices, shape (steps, batch_size)."""
    if n_source < 1:
        raise ConfigError("source set is empty")
    return _cycle(n_source, steps * batch_size, rng).reshape(steps, batch_size)
