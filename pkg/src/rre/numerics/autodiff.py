"""Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor`; values are never mutated in
place. When gradient recording is enabled and at least one operand requires
gradients, the result remembers its parents and a backward closure. Calling
:func:`backward` walks the recorded graph in reverse topological order.

All arithmetic is float64. Each operation checks its output for NaN/Inf and
raises :class:`~rre.errors.NumericalError` naming the offending node.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from rre.errors import NumericalError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Immutable float64 array with an optional node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, name: str) -> None:
    if not np.isfinite(data).all():
        raise NumericalError(name)


def _node(data, parents: Sequence[Tensor], backward, name: str) -> Tensor:
    _check_finite(data, name)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, name=name)
        out._parents = tuple(parents)
        out._backward = backward
        return out
    return Tensor(data, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b, name="add") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.data + b.data, (a, b), backward, name)


def sub(a, b, name="sub") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.data - b.data, (a, b), backward, name)


def mul(a, b, name="mul") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(ad * bd, (a, b), backward, name)


def div(a, b, name="div") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def backward(g):
        ga = g / bd
        gb = -g * out / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(out, (a, b), backward, name)


def neg(a, name="neg") -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), name)


def power(a, exponent: float, name="pow") -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad**exponent

    def backward(g):
        return (g * exponent * ad ** (exponent - 1),)

    return _node(out, (a,), backward, name)


def exp(a, name="exp") -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), name)


def log(a, name="log") -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _node(out, (a,), lambda g: (g / ad,), name)


def sqrt(a, name="sqrt") -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), name)


def tanh(a, name="tanh") -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), name)


def sigmoid(a, name="sigmoid") -> Tensor:
    a = as_tensor(a)
    x = a.data
    # numerically stable in both tails
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), name)


def relu(a, name="relu") -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), name)


def abs_(a, name="abs") -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,), name)


def minimum(a, b, name="minimum") -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return _node(out, (a, b), backward, name)


def maximum(a, b, name="maximum") -> Tensor:
    """Elementwise maximum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return _node(out, (a, b), backward, name)


def clip(a, lo: float, hi: float, name="clip") -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), name)


def where(cond, a, b, name="where") -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        )

    return _node(np.where(cond, a.data, b.data), (a, b), backward, name)


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b, name="matmul") -> Tensor:
    """``a @ b`` with numpy broadcasting over leading batch axes.

    1-D operands are promoted to matrices for the backward pass and the
    result squeezed back, matching numpy semantics.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError("matmul does not accept scalars")
    out = ad @ bd
    a2 = ad[None, :] if ad.ndim == 1 else ad
    b2 = bd[:, None] if bd.ndim == 1 else bd

    def backward(g):
        g2 = g
        if ad.ndim == 1 and bd.ndim == 1:
            g2 = np.reshape(g, (1, 1))
        elif ad.ndim == 1:
            g2 = np.expand_dims(g, -2)
        elif bd.ndim == 1:
            g2 = np.expand_dims(g, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if ad.ndim == 1:
            ga = ga[..., 0, :]
        if bd.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(out, (a, b), backward, name)


def linear(x, weight, bias=None, name="linear") -> Tensor:
    """Affine map ``x @ weight + bias`` recorded as a single node."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    out = xd @ wd
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        ga = g @ wd.T
        gw = (xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        grads = [ga, gw]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return tuple(grads)

    if xd.ndim < 1 or wd.ndim != 2:
        raise ShapeError("linear expects x (..., n) and weight (n, m)")
    return _node(out, parents, backward, name)


def sum_(a, axis=None, keepdims=False, name="sum") -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), backward, name)


def mean(a, axis=None, keepdims=False, name="mean") -> Tensor:
    """Mean computed as ``sum / count`` so it rounds like an explicit division."""
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return div(sum_(a, axis=axis, keepdims=keepdims), float(count), name=name)


def reshape(a, shape, name="reshape") -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), name)


def transpose(a, axes=None, name="transpose") -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _node(out, (a,), lambda g: (np.transpose(g, inv),), name)


def swapaxes(a, ax1: int, ax2: int, name="swapaxes") -> Tensor:
    a = as_tensor(a)
    return _node(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), name
    )


def getitem(a, index, name="getitem") -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data[index]

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out, copy=True), (a,), backward, name)


def concat(tensors: Sequence, axis: int = -1, name="concat") -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, backward, name)


def stack(tensors: Sequence, axis: int = 0, name="stack") -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    n = len(ts)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _node(np.stack([t.data for t in ts], axis=axis), ts, backward, name)


# ---------------------------------------------------------------------------
# fused neural-network primitives


def softmax(a, axis: int = -1, name="softmax") -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward, name)


def log_softmax(a, axis: int = -1, name="log_softmax") -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward, name)


def layer_norm(a, gain, bias, eps: float = 1e-5, name="layer_norm") -> Tensor:
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x = a.data
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gxhat = g * gain.data
        gx = inv / n * (
            n * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = g.reshape(-1, n)
        return gx, (lead * xhat.reshape(-1, n)).sum(axis=0), lead.sum(axis=0)

    return _node(out, (a, gain, bias), backward, name)


def dropout(a, rate: float, rng=None, name="dropout") -> Tensor:
    """Inverted dropout. With ``rng=None`` or ``rate == 0`` this is the identity."""
    a = as_tensor(a)
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.uniform(size=a.shape) >= rate) / (1.0 - rate)
    return _node(a.data * keep, (a,), lambda g: (g * keep,), name)


# ---------------------------------------------------------------------------
# backward pass


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, wrt: Iterable[Tensor], seed=None) -> list:
    """Gradients of ``root`` with respect to each tensor in ``wrt``.

    ``seed`` defaults to ones (the usual choice for a scalar root). Tensors in
    ``wrt`` that do not influence ``root`` receive zero arrays.
    """
    wrt = list(wrt)
    grads: dict[int, np.ndarray] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones_like(root.data) if seed is None else np.asarray(seed, float)
        for node in reversed(_topological_order(root)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if not p.requires_grad or pg is None:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape))
    return out


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function; the reference oracle."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)`` with both gradients flattened.

    Norm-wise rather than per-entry, so entries whose true value is ~0 do not
    turn finite-difference round-off into a spurious failure.
    """
    a = np.asarray(analytic, float).reshape(-1)
    n = np.asarray(numeric, float).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
