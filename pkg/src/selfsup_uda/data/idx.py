"""IDX (MNIST-format) reader and writer.

Header: two zero bytes, a type byte (0x08 = unsigned byte), a dimension count,
then one big-endian uint32 per dimension. Images use (N, H, W) for one channel
(magic 0x00000803) and (N, C, H, W) for several (magic 0x00000804).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .sets import LabeledSet, UnlabeledSet


class IdxFormatError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


IMAGES_3D = 0x00000803
IMAGES_4D = 0x00000804
LABELS = 0x00000801


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} (only unsigned-byte IDX is supported)")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if ndim == 0 or len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head != count:
        raise IdxFormatError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise IdxFormatError("only uint8 arrays can be written")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(array).tobytes())


def to_bytes(images: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 by rounding; (N, 1, H, W) collapses to the 3-d layout."""
    q = np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return q[:, 0] if q.ndim == 4 and q.shape[1] == 1 else q


def read_images(path) -> np.ndarray:
    arr = read_idx(path)
    magic_dims = arr.ndim
    if magic_dims == 3:
        arr = arr[:, None]
    elif magic_dims != 4:
        raise IdxFormatError(f"{path}: image files must have 3 or 4 dimensions, got {magic_dims}")
    return arr.astype(np.float32) / np.float32(255.0)


def read_labels(path) -> np.ndarray:
    arr = read_idx(path)
    if arr.ndim != 1:
        raise IdxFormatError(f"{path}: label files must be 1-d")
    return arr.astype(np.int64)


def load_idx(images_path, labels_path=None, num_classes: int = 10):
    images = read_images(images_path)
    if labels_path is None:
        return UnlabeledSet(images)
    labels = read_labels(labels_path)
    if len(labels) != len(images):
        raise ConsistencyError(f"{len(images)} images but {len(labels)} labels")
    return LabeledSet(images, labels, num_classes)


def save_idx(images_path, images: np.ndarray, labels_path=None, labels=None) -> None:
    write_idx(images_path, to_bytes(images))
    if labels_path is not None:
        write_idx(labels_path, np.asarray(labels, dtype=np.uint8))
