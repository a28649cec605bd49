"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Network activations are rank-4 NCHW arrays (W fastest); parameters and
sequence intermediates use whatever rank they need.  Every op allocates a
fresh output and never mutates its inputs, so tensors are safe to share
read-only across threads.  Gradients accumulate (+=) across fan-out.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "apply_op",
    "backward",
    "record",
    "no_grad",
    "set_finite_checks",
]


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-op NaN/Inf guard; returns the previous setting."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


class Tensor:
    """A dense float array plus an optional gradient accumulator.

    ``requires_grad`` marks leaf tensors (parameters, probed inputs) whose
    ``grad`` field is populated by :func:`backward`.  Tensors produced by ops
    participate in the tape but do not hold grads themselves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_creator", "_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._creator = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, "
            f"requires_grad={self.requires_grad})"
        )


class _Node:
    __slots__ = ("inputs", "out", "backward_fn", "tape", "name")

    def __init__(self, inputs, out, backward_fn, tape, name):
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.tape = tape
        self.name = name


class Tape:
    """Ordered record of the ops of one forward pass; single use.

    The reverse sweep visits each recorded node exactly once, in reverse
    topological (= recording) order.  :func:`backward` clears the tape,
    releasing all saved activations.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        for node in self._nodes:
            node.inputs = ()
            node.backward_fn = None
        self._nodes.clear()


_ACTIVE: Optional[Tape] = None


@contextlib.contextmanager
def record(tape: Optional[Tape] = None):
    """Activate a tape: ops executed in the block are recorded for backward."""
    global _ACTIVE
    prev = _ACTIVE
    _ACTIVE = tape if tape is not None else Tape()
    try:
        yield _ACTIVE
    finally:
        _ACTIVE = prev


@contextlib.contextmanager
def no_grad():
    """Run ops without recording; outputs do not require grad."""
    global _ACTIVE
    prev = _ACTIVE
    _ACTIVE = None
    try:
        yield
    finally:
        _ACTIVE = prev


def apply_op(
    name: str,
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Wrap an op result, check finiteness, and record it on the active tape.

    ``backward_fn`` receives the output gradient and must return one gradient
    array (or None) per input, in order.
    """
    if _FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._creator = None
    out._leaf = False
    if _ACTIVE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(tuple(inputs), out, backward_fn, _ACTIVE, name)
        out._creator = node
        _ACTIVE._nodes.append(node)
    else:
        out.requires_grad = False
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; populates .grad on flagged leaves.

    The tape is cleared afterwards (single use per forward pass).
    """
    if loss.data.size != 1:
        raise ValueError("loss must be a scalar tensor")
    creator = loss._creator
    if creator is None or creator.tape is not tape:
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        gout = grads.pop(id(node.out), None)
        if gout is None:
            continue
        gins = node.backward_fn(gout)
        for tensor, gin in zip(node.inputs, gins):
            if gin is None or not tensor.requires_grad:
                continue
            gin = np.reshape(gin, tensor.data.shape)
            if tensor._leaf:
                if tensor.grad is None:
                    tensor.grad = np.array(gin, copy=True)
                else:
                    tensor.grad = tensor.grad + gin
            else:
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
    tape.clear()
