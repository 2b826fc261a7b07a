"""Reverse-mode autodiff on flat float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer. Operations
record a backward closure on the active Tape; ``backward(loss)`` replays
the tape in reverse recording order, accumulating gradients additively
into every tensor that requires them.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GeometryError(ValueError):
    """Spatial geometry is invalid (e.g. empty conv output, indivisible dims)."""


class UsageError(RuntimeError):
    """API misuse, e.g. backward() on a tensor with no recorded graph."""


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        return t

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations for one forward/backward pass.

    Usage: ``with Tape(): out = f(x); backward(out)``. Replaying entries in
    reverse recording order visits each recorded node exactly once; entries
    whose output received no gradient are skipped.
    """

    def __init__(self):
        self._entries = []  # (output Tensor, backward closure)

    def record(self, out: Tensor, backward_fn):
        self._entries.append((out, backward_fn))

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack.pop()
        self._entries.clear()
        return False


_tape_stack: list = []


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


class no_grad:
    """Context that suspends tape recording (inference mode)."""

    def __enter__(self):
        _tape_stack.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack.pop()
        return False


def record_op(out: Tensor, backward_fn) -> Tensor:
    """Attach a backward closure to `out` on the active tape, if any."""
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)
    return out


def backward(loss: Tensor):
    """Populate .grad for every requires_grad tensor reachable from `loss`."""
    tape = active_tape()
    if tape is None:
        raise UsageError("backward() requires an active Tape")
    if not loss.requires_grad:
        raise UsageError("backward() on a tensor detached from the tape")
    if loss.data.size != 1:
        raise ShapeError("backward() expects a scalar loss")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, fn in reversed(tape._entries):
        if out.grad is not None:
            fn(out.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return record_op(out, _bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s, a.requires_grad)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return record_op(out, _bw)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), a.requires_grad)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, g.reshape(())))

    return record_op(out, _bw)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return record_op(out, _bw)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(a.data > 0.0, a.data, slope * a.data), a.requires_grad)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.where(a.data > 0.0, 1.0, slope))

    return record_op(out, _bw)


_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = 1.0 - np.finfo(np.float64).epsneg


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # stable split form, clipped to the nearest representable values inside
    # (0, 1) so saturation never returns the bounds exactly
    s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = np.clip(s, _SIG_LO, _SIG_HI)
    out = Tensor(s, a.requires_grad)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * s * (1.0 - s))

    return record_op(out, _bw)


def concat_channels(tensors) -> Tensor:
    """Concatenate [N,C,H,W] tensors along the channel axis."""
    tensors = list(tensors)
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ShapeError("concat_channels: incompatible shapes")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1),
                 any(t.requires_grad for t in tensors))
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def _bw(g):
        for t, gpart in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad:
                t.accumulate_grad(gpart)

    return record_op(out, _bw)


def loss_mse(a: Tensor, b) -> Tensor:
    """Mean of squared differences; 0 iff the operands are equal."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"loss_mse: shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size
    out = Tensor(np.dot(d.ravel(), d.ravel()) / n,
                 a.requires_grad or b.requires_grad)

    def _bw(g):
        go = g.reshape(()) * 2.0 / n
        if a.requires_grad:
            a.accumulate_grad(go * d)
        if b.requires_grad:
            b.accumulate_grad(-go * d)

    return record_op(out, _bw)


BCE_EPS = 1e-7


def loss_bce(p: Tensor, y) -> Tensor:
    """Binary cross entropy, mean over elements; p clamped to [eps, 1-eps]."""
    p, y = _as_tensor(p), _as_tensor(y)
    if p.shape != y.shape:
        raise ShapeError(f"loss_bce: shape mismatch {p.shape} vs {y.shape}")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    yd = y.data
    n = pc.size
    val = -(yd * np.log(pc) + (1.0 - yd) * np.log1p(-pc)).mean()
    out = Tensor(val, p.requires_grad or y.requires_grad)

    def _bw(g):
        go = g.reshape(()) / n
        if p.requires_grad:
            inside = (p.data > BCE_EPS) & (p.data < 1.0 - BCE_EPS)
            dp = (-yd / pc + (1.0 - yd) / (1.0 - pc)) * inside
            p.accumulate_grad(go * dp)
        if y.requires_grad:
            y.accumulate_grad(go * (np.log1p(-pc) - np.log(pc)))

    return record_op(out, _bw)
