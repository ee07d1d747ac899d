"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tape records operations while active; backward() replays it in reverse.
Everything is float64.  Only the ops the models in this package need are
provided, each as a module-level function plus (for arithmetic) operator
sugar on Tensor.

Typical use:

    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="w")
    with Tape() as tape:
        loss = frob2(matmul(w, x) - y)
        grads = backward(loss, params={"w": w})

Outside a tape the same functions run eagerly with no recording, so the
forward code doubles as the inference path.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class Tensor:
    """Array wrapper; .grad is populated by backward() for requires_grad leaves."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; all routed through the module-level ops so they record
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


class Tape:
    """Context manager that records ops for reverse-mode differentiation."""

    _active: list["Tape"] = []

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._active.pop()
        return False

    @staticmethod
    def current() -> "Tape | None":
        return Tape._active[-1] if Tape._active else None

    def __len__(self):
        return len(self._nodes)


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Attach out to the active tape if any differentiable parent is involved."""
    tape = Tape.current()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._nodes.append((out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape` (the shape of the pre-broadcast operand)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class GradientError(RuntimeError):
    pass


def backward(loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
    """Reverse sweep from a scalar loss.

    Populates .grad on every requires_grad leaf encountered.  If `params`
    is given, returns {name: gradient}, with an explicit zero array for
    any parameter the loss does not depend on.
    """
    tape = Tape.current()
    if tape is None:
        raise RuntimeError("backward() must run inside the Tape that recorded the loss")
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")

    produced = {id(out) for out, _, _ in tape._nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for out, parents, vjp in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        parent_grads = vjp(g)
        for p, pg in zip(parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if key not in produced:  # leaf
                p.grad = grads[key]

    if params is None:
        return None
    out_grads: dict[str, np.ndarray] = {}
    for pname, tensor in params.items():
        got = grads.get(id(tensor))
        if got is None:
            got = np.zeros_like(tensor.data)
            tensor.grad = got
        out_grads[pname] = got
    return out_grads


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data / b.data)
    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb
    return _record(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data * a.data)
    return _record(out, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root.  Where the input is exactly 0 the upstream
    gradient is dropped: the composites used here (norms, mask
    denominators) all have finite limits there, and this choice recovers
    them instead of producing inf."""
    a = _lift(a)
    out = Tensor(np.sqrt(a.data))
    def vjp(g):
        safe = np.where(out.data > 0.0, 2.0 * out.data, 1.0)
        return (np.where(out.data > 0.0, g / safe, 0.0),)
    return _record(out, (a,), vjp)


def absval(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0.0),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = _lift(a)
    out = Tensor(np.logaddexp(0.0, a.data))
    def vjp(g):
        return (g * _sigmoid_np(a.data),)
    return _record(out, (a,), vjp)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)
    s = _sigmoid_np(a.data)
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------------------
# shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb
    return _record(out, (a, b), vjp)


def gram(a: Tensor, b: Tensor) -> Tensor:
    """a.T @ b with every output entry reduced independently.

    Each entry is np.sum over the 1-d product of one column of ``a`` and one
    column of ``b``, so its rounding depends only on the column contents and
    the shared row count, never on where the entry sits in the output.  BLAS
    matmul does not give that guarantee: permuting the columns of an operand
    can flip low-order bits in entries that should be unchanged.  Use this
    for Gram matrices whose values must be invariant under column permutation
    (matmul is faster when bit-stability does not matter).
    """
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"gram expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"gram row mismatch: {a.data.shape} vs {b.data.shape}")
    raw = np.empty((a.data.shape[1], b.data.shape[1]))
    for i in range(raw.shape[0]):
        for j in range(raw.shape[1]):
            raw[i, j] = np.sum(a.data[:, i] * b.data[:, j])
    out = Tensor(raw)
    def vjp(g):
        ga = b.data @ g.T if a.requires_grad else None
        gb = a.data @ g if b.requires_grad else None
        return ga, gb
    return _record(out, (a, b), vjp)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    a = _lift(a)
    out = Tensor(np.transpose(a.data, axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.reshape(shape))
    src = a.data.shape
    return _record(out, (a,), lambda g: (g.reshape(src),))


def flip(a: Tensor, axis: int) -> Tensor:
    a = _lift(a)
    out = Tensor(np.flip(a.data, axis=axis).copy())
    return _record(out, (a,), lambda g: (np.flip(g, axis=axis).copy(),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return _record(out, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ValueError("concat of an empty list")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)
    def vjp(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(parts)):
            slicer[axis] = slice(bounds[i], bounds[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)
    return _record(out, tuple(parts), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _lift(a)
    slicer = [slice(None)] * a.data.ndim
    slicer[axis] = slice(start, stop)
    out = Tensor(a.data[tuple(slicer)].copy())
    src_shape = a.data.shape
    def vjp(g):
        full = np.zeros(src_shape, dtype=np.float64)
        full[tuple(slicer)] = g
        return (full,)
    return _record(out, (a,), vjp)


def split(a: Tensor, n_parts: int, axis: int = 0) -> list[Tensor]:
    a = _lift(a)
    size = a.data.shape[axis]
    if size % n_parts != 0:
        raise ValueError(f"cannot split axis of size {size} into {n_parts} equal parts")
    step = size // n_parts
    return [slice_axis(a, axis, i * step, (i + 1) * step) for i in range(n_parts)]


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-d tensor; scatter-add on the way back."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError(f"take_rows expects a 2-d tensor, got shape {a.data.shape}")
    idx = np.asarray(indices)
    out = Tensor(a.data[idx])
    src_shape = a.data.shape
    def vjp(g):
        full = np.zeros(src_shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)
    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    src_shape = a.data.shape
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, src_shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy(),)
    return _record(out, (a,), vjp)


def mean_(a: Tensor) -> Tensor:
    a = _lift(a)
    n = a.data.size
    out = Tensor(a.data.mean())
    src_shape = a.data.shape
    return _record(out, (a,), lambda g: (np.broadcast_to(g / n, src_shape).copy(),))


def frob2(a: Tensor) -> Tensor:
    """Squared Frobenius norm, accumulated with math.fsum.

    fsum makes the reduction independent of element order, so quantities
    like the clustering loss stay bit-identical when rows or columns of
    the inputs are permuted.
    """
    a = _lift(a)
    sq = a.data * a.data
    out = Tensor(np.float64(math.fsum(sq.ravel().tolist())))
    return _record(out, (a,), lambda g: (2.0 * a.data * g,))


# ---------------------------------------------------------------------------
# convolution


def conv1d(x: Tensor, w: Tensor, pad_left: int, pad_right: int) -> Tensor:
    """Correlate x (b, c_in, n) with kernel w (c_out, c_in, m); see kernels module."""
    x, w = _lift(x), _lift(w)
    out = Tensor(kernels.conv1d_fwd(x.data, w.data, pad_left, pad_right))
    n_in = x.data.shape[2]
    m_taps = w.data.shape[2]
    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv1d_gx(g, w.data, pad_left, n_in) if x.requires_grad else None
        gw = kernels.conv1d_gw(g, x.data, pad_left, m_taps) if w.requires_grad else None
        return gx, gw
    return _record(out, (x, w), vjp)
