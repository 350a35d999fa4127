"""Self-supervised pretext tasks: image transforms plus the labels they synthesize.

Every constructor here sees images only. Main-task labels never enter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import Tensor, UsageError, softmax_cross_entropy, square_loss
from .model import ConfigError, HeadConfig

KINDS = ("rotation", "vflip", "loc4", "loc_regress")
OUTPUT_DIM = {"rotation": 4, "vflip": 2, "loc4": 4, "loc_regress": 2}
SOURCE, TARGET = 0, 1


@dataclass(frozen=True)
class TaskSpec:
    id: int
    kind: str
    patch_size: int | None = None  # location tasks; None means half the image side
    expand_rotations: bool = False  # rotation only: emit all four rotations per image

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; choose from {KINDS}")
        if self.id < 1:
            raise ConfigError("self-supervised task ids start at 1")

    @property
    def output_dim(self) -> int:
        return OUTPUT_DIM[self.kind]

    @property
    def loss_kind(self) -> str:
        return "square" if self.kind == "loc_regress" else "cross_entropy"

    def head_config(self) -> HeadConfig:
        return HeadConfig(self.id, self.output_dim,
                          "regression" if self.kind == "loc_regress" else "classification")


@dataclass
class SelfSupBatch:
    images: np.ndarray
    labels: np.ndarray  # int class indices, or float (N, 2) coordinates for loc_regress
    provenance: np.ndarray  # SOURCE / TARGET per row

    def __post_init__(self):
        if len(self.images) != len(self.labels) or len(self.images) != len(self.provenance):
            raise ValueError("images, labels and provenance must have equal length")


def _provenance(n, provenance):
    if provenance is None:
        return np.zeros(n, dtype=np.int8)
    provenance = np.asarray(provenance, dtype=np.int8)
    if provenance.shape != (n,):
        raise ValueError("provenance must have one entry per image")
    return provenance


def rotate90(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate a (C, H, W) image by k quarter turns counterclockwise."""
    if k not in (0, 1, 2, 3):
        raise ValueError("k must be 0, 1, 2 or 3")
    return np.ascontiguousarray(np.rot90(image, k, axes=(-2, -1)))


def vflip(image: np.ndarray) -> np.ndarray:
    """Reverse row order (upside-down flip) of a (..., H, W) array."""
    return np.ascontiguousarray(image[..., ::-1, :])


def _rotate_batch(images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    out = np.empty_like(images)
    for k in range(4):
        sel = labels == k
        if sel.any():
            out[sel] = np.rot90(images[sel], k, axes=(2, 3))
    return out


def make_rotation_batch(images: np.ndarray, rng: np.random.Generator, provenance=None,
                        expand: bool = False) -> SelfSupBatch:
    images = np.asarray(images)
    n = len(images)
    if images.shape[2] != images.shape[3]:
        raise ValueError("rotation batches need square images")
    prov = _provenance(n, provenance)
    if expand:
        labels = np.tile(np.arange(4), n)
        images = np.repeat(images, 4, axis=0)
        prov = np.repeat(prov, 4)
    else:
        labels = rng.integers(0, 4, size=n)
    return SelfSupBatch(_rotate_batch(images, labels), labels, prov)


def make_flip_batch(images: np.ndarray, rng: np.random.Generator, provenance=None) -> SelfSupBatch:
    images = np.asarray(images)
    labels = rng.integers(0, 2, size=len(images))
    out = images.copy()
    flipped = labels == 1
    out[flipped] = images[flipped][:, :, ::-1, :]
    return SelfSupBatch(out, labels, _provenance(len(images), provenance))


def _check_patch(patch: int, H: int, W: int, strict: bool) -> None:
    limit_ok = (patch < min(H, W)) if strict else (patch <= H // 2 and patch <= W // 2)
    if patch < 1 or not limit_ok:
        raise ConfigError(f"patch size {patch} too large for {H}x{W} images")


def make_loc4_batch(images: np.ndarray, patch_size: int | None, rng: np.random.Generator,
                    provenance=None) -> SelfSupBatch:
    """Crop one patch per image from a uniformly chosen quadrant.

    Label = 2 * row_half + col_half, i.e. (0,0)->0, (0,1)->1, (1,0)->2, (1,1)->3.
    """
    images = np.asarray(images)
    N, C, H, W = images.shape
    p = patch_size if patch_size is not None else H // 2
    _check_patch(p, H, W, strict=False)
    labels = rng.integers(0, 4, size=N)
    qh, qw = H // 2, W // 2
    # slack inside the quadrant; zero when the patch is the whole quadrant
    dr = rng.integers(0, qh - p + 1, size=N)
    dc = rng.integers(0, qw - p + 1, size=N)
    rows = (labels // 2) * qh + dr
    cols = (labels % 2) * qw + dc
    out = np.empty((N, C, p, p), dtype=images.dtype)
    for i in range(N):
        out[i] = images[i, :, rows[i]:rows[i] + p, cols[i]:cols[i] + p]
    return SelfSupBatch(out, labels, _provenance(N, provenance))


def make_loc_regress_batch(images: np.ndarray, patch_size: int | None, rng: np.random.Generator,
                           provenance=None) -> SelfSupBatch:
    """Crop a patch at a uniform corner (r, c); target (r/(H-p), c/(W-p)) in [0, 1]^2."""
    images = np.asarray(images)
    N, C, H, W = images.shape
    p = patch_size if patch_size is not None else H // 2
    _check_patch(p, H, W, strict=True)
    rows = rng.integers(0, H - p + 1, size=N)
    cols = rng.integers(0, W - p + 1, size=N)
    out = np.empty((N, C, p, p), dtype=images.dtype)
    for i in range(N):
        out[i] = images[i, :, rows[i]:rows[i] + p, cols[i]:cols[i] + p]
    targets = np.stack([rows / (H - p), cols / (W - p)], axis=1).astype(images.dtype)
    return SelfSupBatch(out, targets, _provenance(N, provenance))


def decode_corner(target, H: int, W: int, patch_size: int) -> tuple:
    r, c = target
    return int(round(float(r) * (H - patch_size))), int(round(float(c) * (W - patch_size)))


def make_batch(task: TaskSpec, images: np.ndarray, rng: np.random.Generator, provenance=None) -> SelfSupBatch:
    if task.kind == "rotation":
        return make_rotation_batch(images, rng, provenance, expand=task.expand_rotations)
    if task.kind == "vflip":
        return make_flip_batch(images, rng, provenance)
    if task.kind == "loc4":
        return make_loc4_batch(images, task.patch_size, rng, provenance)
    return make_loc_regress_batch(images, task.patch_size, rng, provenance)


def task_loss(task: TaskSpec, head_output: Tensor, labels) -> Tensor:
    labels = np.asarray(labels)
    if task.loss_kind == "square":
        if labels.dtype.kind != "f" or labels.ndim != 2:
            raise UsageError("loc_regress expects (N, 2) float targets")
        return square_loss(head_output, labels)
    if labels.dtype.kind not in "iu" or labels.ndim != 1:
        raise UsageError(f"{task.kind} expects integer class labels")
    return softmax_cross_entropy(head_output, labels)
