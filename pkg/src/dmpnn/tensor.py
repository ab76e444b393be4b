"""Dense float64 tensors (rank <= 2) with tape-based reverse-mode autodiff.

Operations executed inside a ``with Tape():`` block are recorded when any input
is tracked (a leaf created with ``requires_grad=True`` or an output already on
the tape). :func:`backward` walks the tape in strict reverse insertion order and
accumulates into the ``grad`` of every tracked leaf. Each thread has its own
active tape, so independent models can train on separate threads.

Conventions: the derivative of ReLU at exactly 0 is 0; dropout is inverted
(survivors are scaled by ``1 / (1 - p)`` at train time).
"""

from __future__ import annotations

import threading
import weakref
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class TensorError(Exception):
    pass


class ShapeMismatch(TensorError, ValueError):
    pass


class InvalidSegmentId(TensorError, IndexError):
    pass


class NotScalar(TensorError, ValueError):
    pass


class DetachedNode(TensorError, RuntimeError):
    pass


_local = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape_ref", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeMismatch(f"tensors have rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._tape_ref: Optional[weakref.ref] = None
        self._node = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._tape_ref = None
        t._node = -1
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def _tape(self) -> Optional["Tape"]:
        # weak, so a finished graph is freed by refcount instead of waiting on the cycle collector
        return None if self._tape_ref is None else self._tape_ref()

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._tape is not None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        out._tape_ref = weakref.ref(self)
        out._node = len(self.nodes)
        self.nodes.append((out, parents, backward_fn))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(arr: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor._wrap(arr)
    tape = _active_tape()
    if tape is not None and any(p.tracked for p in parents):
        tape._record(out, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.tracked else None,
            _unbroadcast(g * a.data, b.shape) if b.tracked else None,
        ),
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


# BLAS routes leftover rows of a tile through different kernels, so a row's
# product can change in the last bit with its position in the batch. Calling it
# on fixed 4-row blocks (one micro-tile) makes each row's result position-free.
ROW_BLOCK = 4


def row_stable_product(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` computed so every output row depends only on its input row."""
    n = x.shape[0]
    pad = (-n) % ROW_BLOCK
    if pad:
        x = np.concatenate([x, np.zeros((pad, x.shape[1]))])
    out = np.empty((x.shape[0], w.shape[1]))
    for s in range(0, x.shape[0], ROW_BLOCK):
        out[s : s + ROW_BLOCK] = x[s : s + ROW_BLOCK] @ w
    return out[:n]


def matmul(a, b) -> Tensor:
    """Matrix product. Off-tape (inference) it uses :func:`row_stable_product`,
    so reordering the rows of ``a`` reorders the result bit for bit."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        return (g @ b.data.T if a.tracked else None, a.data.T @ g if b.tracked else None)

    if _active_tape() is None:
        return Tensor._wrap(row_stable_product(a.data, b.data))
    return _make(a.data @ b.data, (a, b), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.T, (x,), lambda g: (g.T,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _stable_sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against constant ``targets``."""
    x = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != x.shape:
        raise ShapeMismatch(f"bce_with_logits: {x.shape} vs {y.shape}")
    z = x.data
    val = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return _make(val, (x,), lambda g: (g * (_stable_sigmoid(z) - y),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeMismatch("concat of nothing")
    if any(t.data.ndim != 2 for t in ts):
        raise ShapeMismatch("concat expects rank-2 tensors")
    other = 1 - axis
    if len({t.shape[other] for t in ts}) != 1:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in ts]}")
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 0:
            return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(ts)))
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(ts)))

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), backward)


def _check_ids(ids: np.ndarray, n: int, op: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatch(f"{op}: ids must be a vector")
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise InvalidSegmentId(f"{op}: ids outside [0, {n})")
    return ids


def segment_matrix(ids: np.ndarray, num_segments: int) -> sp.csr_matrix:
    """Sparse ``num_segments x len(ids)`` indicator matrix for summing rows by segment."""
    ids = _check_ids(ids, num_segments, "segment_matrix")
    n = ids.size
    return sp.csr_matrix((np.ones(n), (ids, np.arange(n))), shape=(num_segments, n))


def segment_sum(values, segment_ids, num_segments: int, matrix: Optional[sp.csr_matrix] = None) -> Tensor:
    """``out[s] = sum(values[i] for i with segment_ids[i] == s)``; empty segments are zero.

    A precomputed :func:`segment_matrix` may be passed to skip rebuilding it.
    """
    v = as_tensor(values)
    ids = _check_ids(segment_ids, num_segments, "segment_sum")
    if v.data.ndim != 2 or v.shape[0] != ids.size:
        raise ShapeMismatch(f"segment_sum: values {v.shape} vs {ids.size} ids")
    if matrix is None:
        matrix = segment_matrix(ids, num_segments)
    out = np.asarray(matrix @ v.data)
    return _make(out, (v,), lambda g: (g[ids],))


def gather_rows(values, ids, matrix: Optional[sp.csr_matrix] = None) -> Tensor:
    """``out[i] = values[ids[i]]``.

    ``matrix`` may carry a precomputed ``segment_matrix(ids, len(values))`` used
    for the scatter-add in the backward pass.
    """
    v = as_tensor(values)
    if v.data.ndim != 2:
        raise ShapeMismatch("gather_rows expects a rank-2 tensor")
    ids = _check_ids(ids, v.shape[0], "gather_rows")
    n = v.shape[0]

    def backward(g):
        if matrix is not None:
            return (np.asarray(matrix @ g),)
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, ids, g)
        return (out,)

    return _make(v.data[ids], (v,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) + (0.0 if loss.grad is None else loss.grad)
            return
        raise DetachedNode("loss was not computed on a tape")
    tape = loss._tape
    grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
    for idx in range(loss._node, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        out, parents, fn = tape.nodes[idx]
        for parent, pg in zip(parents, fn(g)):
            if pg is None or not parent.tracked:
                continue
            if parent._tape is tape:
                if parent._node in grads:
                    grads[parent._node] = grads[parent._node] + pg
                else:
                    grads[parent._node] = pg
            elif parent.requires_grad:
                pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
