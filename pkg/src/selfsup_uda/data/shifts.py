"""Label-preserving pixel shifts used to synthesize a target domain."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import zoom

from ..model import ConfigError
from .sets import LabeledSet, UnlabeledSet

SHIFT_KINDS = ("brightness_scale", "channel_blend", "additive_noise")


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    alpha: float = 1.0  # brightness factor
    beta: float = 0.0  # blend weight of the color field
    sigma: float = 0.0  # noise std
    field_cells: int = 4  # color field resolution before upsampling

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ConfigError(f"unknown shift kind {self.kind!r}")
        if self.alpha <= 0:
            raise ConfigError("brightness factor must be positive")
        if not 0 <= self.beta <= 1:
            raise ConfigError("blend weight must lie in [0, 1]")
        if self.sigma < 0:
            raise ConfigError("noise sigma must be nonnegative")
        if self.field_cells < 1:
            raise ConfigError("field_cells must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def color_field(n: int, channels: int, height: int, width: int, cells: int, seed: int) -> np.ndarray:
    """Per-image smooth random color texture in [0, 1], shape (n, channels, height, width)."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.0, 1.0, size=(n, channels, cells + 1, cells + 1))
    f = zoom(coarse, (1, 1, height / (cells + 1), width / (cells + 1)), order=1, grid_mode=True,
             mode="nearest")
    return np.clip(f[:, :, :height, :width], 0.0, 1.0)


def shift_images(images: np.ndarray, spec: ShiftSpec, seed: int) -> np.ndarray:
    x = np.asarray(images)
    if spec.kind == "brightness_scale":
        if spec.alpha == 1.0:
            return x.copy()
        return np.clip(spec.alpha * x, 0.0, 1.0).astype(x.dtype)
    if spec.kind == "channel_blend":
        if spec.beta == 0.0:
            return x.copy()
        N, C, H, W = x.shape
        fld = color_field(N, C, H, W, spec.field_cells, seed)
        return ((1.0 - spec.beta) * x + spec.beta * fld).astype(x.dtype)
    if spec.sigma == 0.0:
        return x.copy()
    noise = np.random.default_rng(seed).normal(0.0, spec.sigma, size=x.shape)
    return np.clip(x + noise, 0.0, 1.0).astype(x.dtype)


def apply_shift(data, spec: ShiftSpec, seed: int):
    """Shift pixels only; labels, if present, pass through untouched."""
    shifted = shift_images(data.images, spec, seed)
    if isinstance(data, LabeledSet):
        return LabeledSet(shifted, data.labels.copy(), data.num_classes)
    return UnlabeledSet(shifted)


def to_channels(images: np.ndarray, channels: int) -> np.ndarray:
    """Replicate a single grey channel to ``channels`` channels."""
    if images.shape[1] == channels:
        return images
    if images.shape[1] != 1:
        raise ConfigError(f"cannot convert {images.shape[1]} channels to {channels}")
    return np.repeat(images, channels, axis=1)
