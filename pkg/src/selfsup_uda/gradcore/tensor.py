"""Tensor values and the computation tape used for reverse-mode differentiation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class UsageError(RuntimeError):
    pass


class Tensor:
    """An n-d float array with an optional gradient accumulator.

    Leaf tensors (parameters, inputs) have ``grad`` filled by :func:`backward`;
    tensors produced by ops keep their gradients only inside the backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class ComputationTape:
    """Ordered record of executed ops.

    Ops record themselves onto the innermost active tape (``with tape:``) when
    at least one input requires a gradient. Outside any tape nothing is
    recorded, which is how inference runs.
    """

    entries: list = field(default_factory=list)

    def __enter__(self) -> "ComputationTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def produced(self, t: Tensor) -> bool:
        return any(e.output is t for e in self.entries)


_ACTIVE: list = []


def active_tape() -> Optional[ComputationTape]:
    return _ACTIVE[-1] if _ACTIVE else None


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")
    return arr


def make_output(op: str, data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    check_finite(data, op)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.entries.append(TapeEntry(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor, tape: ComputationTape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients add onto whatever is already in ``.grad`` until the caller
    resets them with ``zero_grad``.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise UsageError("loss was not produced on this tape")
    pending = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = pending.pop(id(entry.output), None)
        if g is None:
            continue
        grads = entry.backward(g)
        for inp, gi in zip(entry.inputs, grads):
            if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            check_finite(gi, f"{entry.op} backward")
            if inp.is_leaf:
                if inp.grad is None:
                    inp.grad = gi.astype(inp.dtype, copy=True)
                else:
                    inp.grad += gi
            else:
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
