"""Label-free model selection: mean feature distance plus normalized source error."""
from __future__ import annotations

import numpy as np

from .gradcore import UsageError
from .model import ModelParams, encode


def feature_sum(params: ModelParams, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    total = np.zeros(params.feature_dim, dtype=np.float64)
    for i in range(0, len(images), batch_size):
        total += encode(params, images[i:i + batch_size]).data.sum(axis=0, dtype=np.float64)
    return total


def distance_between_means(source_features: np.ndarray, target_features: np.ndarray) -> float:
    """Euclidean distance between the row means of two feature matrices."""
    source_features = np.asarray(source_features, dtype=np.float64)
    target_features = np.asarray(target_features, dtype=np.float64)
    if len(source_features) == 0 or len(target_features) == 0:
        raise UsageError("mean distance needs two nonempty sets")
    return float(np.linalg.norm(source_features.mean(axis=0) - target_features.mean(axis=0)))


def mean_distance(params: ModelParams, source_images: np.ndarray, target_images: np.ndarray,
                  batch_size: int = 500) -> float:
    """Linear-kernel discrepancy between encoded source and target sets.

    Runs in inference mode; nothing is recorded for differentiation, so this
    value can never leak into a training gradient.
    """
    if len(source_images) == 0 or len(target_images) == 0:
        raise UsageError("mean distance needs two nonempty sets")
    ms = feature_sum(params, source_images, batch_size) / len(source_images)
    mt = feature_sum(params, target_images, batch_size) / len(target_images)
    return float(np.linalg.norm(ms - mt))


def _normalize(x: np.ndarray) -> np.ndarray:
    positive = x[x > 0]
    if positive.size == 0:
        return np.ones_like(x)
    return x / positive.min()


def combine(v, w) -> np.ndarray:
    """u = v / min(v) + w / min(w).

    A zero minimum is replaced by the smallest positive entry; an all-zero
    trace contributes a constant 1.
    """
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape or v.ndim != 1:
        raise UsageError(f"v and w must be 1-d of equal length, got {v.shape} and {w.shape}")
    if (v < 0).any() or (w < 0).any():
        raise UsageError("measurement vectors must be nonnegative")
    return _normalize(v) + _normalize(w)


def early_stop(u) -> int:
    """0-based argmin of u; ties resolve to the earliest epoch."""
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise UsageError("empty measurement vector")
    return int(np.argmin(u))


def select_run(traces) -> tuple:
    """Pick (run index, epoch) over several runs (training logs or (v, w) pairs).

    Each run is normalized on its own trace; the run whose minimum u is
    smallest wins, earliest run on ties.
    """
    best = None
    for r, trace in enumerate(traces):
        v, w = (trace.v, trace.w) if hasattr(trace, "v") else trace
        u = combine(v, w)
        t = early_stop(u)
        if best is None or u[t] < best[2]:
            best = (r, t, u[t])
    if best is None:
        raise UsageError("no runs to select from")
    return best[0], best[1]
