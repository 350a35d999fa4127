"""Dataset containers.

Target-domain containers carry images only. Target labels live in an
:class:`~selfsup_uda.evaluate.Sidecar`, which the training and selection code
never receives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import ConfigError


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("label count must equal image count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.images[idx], self.labels[idx], self.num_classes)

    def unlabeled(self) -> "UnlabeledSet":
        return UnlabeledSet(self.images)


@dataclass
class UnlabeledSet:
    images: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "UnlabeledSet":
        return UnlabeledSet(self.images[idx])


@dataclass
class DomainPair:
    """Everything training is allowed to see.

    ``source_val`` is labeled (for the source error trace); ``source_val.unlabeled()``
    and ``target_val`` are the unlabeled validation sets used for the mean distance.
    """

    source_train: LabeledSet
    source_val: LabeledSet
    target_train: UnlabeledSet
    target_val: UnlabeledSet

    def __post_init__(self):
        shapes = {s.images.shape[1:] for s in (self.source_train, self.source_val,
                                               self.target_train, self.target_val)}
        if len(shapes) != 1:
            raise ConfigError(f"all splits must share image shape, got {shapes}")

    @property
    def image_shape(self) -> tuple:
        return self.source_train.images.shape[1:]

    @property
    def num_classes(self) -> int:
        return self.source_train.num_classes


def split(n_or_set, fractions, seed: int):
    """Disjoint seeded partition. Accepts a set (returns subsets) or a length (returns index arrays)."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.ndim != 1 or (fractions < 0).any() or not np.isclose(fractions.sum(), 1.0):
        raise ConfigError("fractions must be nonnegative and sum to 1")
    n = n_or_set if isinstance(n_or_set, (int, np.integer)) else len(n_or_set)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.round(np.cumsum(fractions) * n).astype(int)
    bounds[-1] = n
    parts = np.split(perm, bounds[:-1])
    if any(len(p) == 0 for p in parts):
        raise ConfigError(f"split of {n} items by {fractions.tolist()} leaves an empty part")
    if isinstance(n_or_set, (int, np.integer)):
        return parts
    return [n_or_set.subset(np.sort(p)) for p in parts]


def make_domain_pair(source: LabeledSet, target: UnlabeledSet, val_fraction: float = 0.1,
                     seed: int = 0) -> DomainPair:
    target = UnlabeledSet(target.images)  # labels, if any, are dropped here
    s_train, s_val = split(source, (1 - val_fraction, val_fraction), seed)
    t_train, t_val = split(target, (1 - val_fraction, val_fraction), seed + 1)
    return DomainPair(s_train, s_val, t_train, t_val)
