"""Dense float32 tensors with tape-based reverse-mode autodiff.

Design notes:

* Everything is float32. Gradients are plain numpy arrays stored on the
  leaf tensors; interior gradients live only for the duration of one
  backward sweep.
* Recording happens only while a ``Tape`` is active (``with Tape() as t:``)
  and only for ops that can reach a ``requires_grad`` leaf. Inference code
  simply runs without a tape and pays no bookkeeping cost.
* Tie-breaking is pinned: ``reduce_min``/``reduce_max`` route the gradient
  to the first extremal index along the axis, and elementwise
  ``minimum``/``maximum`` route it to the first argument on ties.
* ``backward`` accumulates: calling it twice without clearing grads adds
  the two gradient fields.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Execution-ordered record of primitive ops for one backward pass."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def leaves(self) -> tuple["Tensor", ...]:
        return tuple(self._leaves)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A float32 ndarray plus optional gradient bookkeeping.

    ``data`` is treated as immutable by every op in this module; optimizers
    are the only code that mutates it in place.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("tensor data must be finite (no NaN/Inf)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _make(data: np.ndarray) -> Tensor:
    # internal fast path: skips the finiteness scan done for user input
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._bwd = None
    return t


def detach(t: Tensor) -> Tensor:
    """A constant view of ``t``: same data, cut from the graph."""
    return _make(t.data)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = _make(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad or p._bwd is not None for p in parents):
        out._parents = parents
        out._bwd = bwd
        tape._nodes.append(out)
        for p in parents:
            if p.requires_grad and p._bwd is None and id(p) not in tape._leaf_ids:
                tape._leaf_ids.add(id(p))
                tape._leaves.append(p)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep over ``tape`` seeding d(loss)/d(loss) = 1.

    Accumulates into ``.grad`` of every requires_grad leaf that fed a
    recorded op (zeros if the leaf never influenced ``loss``).
    """
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss._bwd is None and not loss.requires_grad:
        raise ValueError("loss was not recorded on the active tape")
    buf: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float32)}
    for node in reversed(tape._nodes):
        g = buf.pop(id(node), None)
        if g is None or node._bwd is None:
            continue
        for parent, pg in zip(node._parents, node._bwd(g)):
            if pg is None:
                continue
            if parent._bwd is not None:
                key = id(parent)
                if key in buf:
                    buf[key] = buf[key] + pg
                else:
                    buf[key] = pg
            elif parent.requires_grad:
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float32, copy=True)
                else:
                    parent.grad = parent.grad + pg
    for leaf in tape._leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # collapse gradient of a broadcast op back to the operand's shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _record(a.data / b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), bwd)


# -- nonlinearities ------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    t = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t)).astype(np.float32)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _record(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _record(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _record(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        return (g / a.data,)

    return _record(np.log(a.data), (a,), bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    # ties route the gradient to the first argument
    mask = a.data <= b.data

    def bwd(g):
        return (
            _unbroadcast(g * mask, a.data.shape),
            _unbroadcast(g * ~mask, b.data.shape),
        )

    return _record(np.minimum(a.data, b.data), (a, b), bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    mask = a.data >= b.data

    def bwd(g):
        return (
            _unbroadcast(g * mask, a.data.shape),
            _unbroadcast(g * ~mask, b.data.shape),
        )

    return _record(np.maximum(a.data, b.data), (a, b), bwd)


# -- reductions ----------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(np.float32),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for ax in sorted(ax % a.data.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).astype(np.float32),)

    return _record(np.asarray(out, dtype=np.float32), (a,), bwd)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return reduce_sum(a, axis=axis) * (1.0 / n)


def _reduce_extreme(a: Tensor, axis: int, pick) -> Tensor:
    if a.data.ndim == 0:
        raise ShapeError("cannot reduce a 0-d tensor")
    axis = axis % a.data.ndim
    idx = pick(a.data, axis=axis)
    keep = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, keep, axis=axis).squeeze(axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, keep, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record(out, (a,), bwd)


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient goes to the first argmax."""
    return _reduce_extreme(a, axis, np.argmax)


def reduce_min(a: Tensor, axis: int) -> Tensor:
    """Min along one axis; gradient goes to the first argmin."""
    return _reduce_extreme(a, axis, np.argmin)


# -- shape manipulation ---------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _record(a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _record(a.data.transpose(axes), (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(data, parts, bwd)


def tile_new(a: Tensor, axis: int, reps: int) -> Tensor:
    """Insert a new axis of length ``reps`` at ``axis`` (broadcast view)."""
    expanded = np.expand_dims(a.data, axis)
    shape = list(expanded.shape)
    shape[axis] = reps
    data = np.broadcast_to(expanded, shape)

    def bwd(g):
        return (g.sum(axis=axis),)

    return _record(data, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), computed stably; used for Bernoulli log-probs."""
    x = a.data
    out = (np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))).astype(np.float32)
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(np.float32)

    def bwd(g):
        return (g * s,)

    return _record(out, (a,), bwd)
