"""Differentiable ops. Each returns a new Tensor and records itself on the active tape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, make_output


class LabelError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_ROW_BLOCK = 256


def _rows_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b whose rows do not depend on how many other rows are in ``a``.

    BLAS picks kernels (and so summation orders) by matrix shape. Feeding it
    zero-padded blocks of a fixed height keeps every row on the same path.
    """
    n = a.shape[0]
    m = -(-n // _ROW_BLOCK) * _ROW_BLOCK
    out = np.empty((m, b.shape[1]), dtype=np.result_type(a, b))
    block = np.zeros((_ROW_BLOCK, a.shape[1]), dtype=a.dtype)
    for i in range(0, m, _ROW_BLOCK):
        rows = min(_ROW_BLOCK, n - i)
        block[:rows] = a[i:i + rows]
        if rows < _ROW_BLOCK:
            block[rows:] = 0
        np.matmul(block, b, out=out[i:i + _ROW_BLOCK])
    return out[:n]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation (no kernel flip) via im2col."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"input has {C} channels, kernel expects {Cw}")
    if stride < 1 or padding < 0:
        raise DimensionError("stride must be positive and padding nonnegative")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {H}x{W} (pad {padding})")
    if b is not None and b.shape != (O,):
        raise DimensionError(f"bias shape {b.shape} does not match {O} output channels")

    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    wm = w.data.reshape(O, -1)
    out = _rows_matmul(cols, wm.T)
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward_fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (gm.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = gm.sum(axis=0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = (gm @ wm).reshape(N, Ho, Wo, C, kh, kw)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw, gb

    return make_output("conv2d", out, (x, w, b), backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = _rows_matmul(x.data, w.data.T)
    if b is not None:
        out = out + b.data

    def backward_fn(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if (b is not None and b.requires_grad) else None
        return gx, gw, gb

    return make_output("linear", out, (x, w, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.maximum(x.data, 0)  # propagates NaN so the finiteness check sees it
    return make_output("relu", out, (x,), lambda g: (g * mask,))


def max_pool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pool; ties route the gradient to the first position."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"max_pool2 expects 4-d input, got {x.shape}")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"max_pool2 needs even spatial extents, got {H}x{W}")
    r = x.data.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = r.argmax(axis=-1)[..., None]
    out = np.take_along_axis(r, idx, axis=-1)[..., 0]

    def backward_fn(g):
        gr = np.zeros((N, C, H // 2, W // 2, 4), dtype=g.dtype)
        np.put_along_axis(gr, idx, g[..., None], axis=-1)
        gx = gr.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return (gx,)

    return make_output("max_pool2", out, (x,), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4-d input, got {x.shape}")
    N, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward_fn(g):
        return (np.broadcast_to((g / (H * W))[:, :, None, None], x.shape).copy(),)

    return make_output("global_avg_pool", out, (x,), backward_fn)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm2d(x: Tensor, scale: Tensor, shift: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Per-channel batch norm. Train mode updates ``state`` in place.

    Running variance is tracked with the unbiased batch estimate.
    """
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"batch_norm2d expects 4-d input, got {x.shape}")
    N, C, H, W = x.shape
    if scale.shape != (C,) or shift.shape != (C,):
        raise DimensionError("scale/shift must have one entry per channel")
    eps = state.eps
    if train:
        m = N * H * W
        if m < 2:
            raise DegenerateBatchError("batch norm in train mode needs at least two values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        mom = state.momentum
        state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean
        state.running_var[...] = (1 - mom) * state.running_var + mom * var * (m / (m - 1))
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None]

    def backward_fn(g):
        gscale = (g * xhat).sum(axis=(0, 2, 3)) if scale.requires_grad else None
        gshift = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * scale.data[None, :, None, None]
            if train:
                m = N * H * W
                gx = (inv_std[None, :, None, None] / m) * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
            else:
                gx = gxhat * inv_std[None, :, None, None]
        return gx, gscale, gshift

    return make_output("batch_norm2d", out, (x, scale, shift), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_output("add", a.data + b.data, (a, b), lambda g: (g, g))


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_output("sum", out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-d, got {logits.shape}")
    N, K = logits.shape
    if labels.shape != (N,):
        raise DimensionError(f"expected {N} labels, got shape {labels.shape}")
    if labels.dtype.kind not in "iu" or (N and (labels.min() < 0 or labels.max() >= K)):
        raise LabelError(f"labels must be integers in [0, {K})")
    logp = log_softmax(logits.data)
    rows = np.arange(N)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward_fn(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / N),)

    return make_output("softmax_cross_entropy", loss, (logits,), backward_fn)


def square_loss(pred: Tensor, target) -> Tensor:
    """Mean over batch and coordinates of (pred - target)^2."""
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"square_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    loss = np.asarray((diff ** 2).mean(), dtype=pred.dtype)
    return make_output("square_loss", loss, (pred,), lambda g: (diff * (2 * g / diff.size),))

