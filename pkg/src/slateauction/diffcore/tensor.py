"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, when gradients are enabled, remembers the
operation that produced it. ``backward(loss)`` walks that tape once, in
reverse topological order, and overwrites ``.grad`` on every reachable tensor
that has ``requires_grad`` set. Broadcasting follows numpy semantics; the
extra broadcast dimensions are summed out on the way back.

Everything is float64. There is no GPU path and no in-place mutation of
``.data`` once a tensor participates in a graph.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._bwd = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        """A defensive copy of the raw values."""
        return np.array(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar ------------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        backward(self)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents, bwd):
    """Wrap an op result; records the tape edge only when it can matter."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t, g):
    if t.requires_grad:
        t.grad += _unbroadcast(g, t.data.shape)


def backward(loss):
    """Populate ``.grad`` with dLoss/dTensor for everything reachable.

    Each call overwrites previous gradients (no silent accumulation across
    calls). ``loss`` must be a scalar.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        if node.requires_grad:
            node.grad = np.zeros_like(node.data)
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None and node.requires_grad:
            node._bwd(node.grad)


# -- elementwise arithmetic --------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _result(out, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(out, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(out, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _result(out, (a, b), bwd)


def neg(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _result(-a.data, (a,), bwd)


def power(a, exponent):
    """Elementwise a**c for a constant (non-Tensor) exponent."""
    a = as_tensor(a)
    c = float(exponent)
    out = a.data**c

    def bwd(g):
        _accum(a, g * c * a.data ** (c - 1.0))

    return _result(out, (a,), bwd)


# -- transcendental ----------------------------------------------------------


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return _result(out, (a,), bwd)


def log(a):
    a = as_tensor(a)
    out = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _result(out, (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _result(out, (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _result(out, (a,), bwd)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0.0))

    return _result(out, (a,), bwd)


# -- reductions and shape ----------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _result(out, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(out, (a,), bwd)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)

    def bwd(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _result(out, (a,), bwd)


def take(a, index):
    """Numpy-style indexing/slicing, with scatter-add on the way back."""
    a = as_tensor(a)
    out = a.data[index]

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, index, g)
        _accum(a, buf)

    return _result(out, (a,), bwd)


def concat(tensors, axis=-1):
    parts = [as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _result(out, tuple(parts), bwd)


def stack(tensors, axis=0):
    parts = [as_tensor(t) for t in tensors]
    out = np.stack([p.data for p in parts], axis=axis)

    def bwd(g):
        for i, p in enumerate(parts):
            _accum(p, np.take(g, i, axis=axis))

    return _result(out, tuple(parts), bwd)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """np.matmul with broadcasting over leading (batch) dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, ga)
        _accum(b, gb)

    return _result(out, (a, b), bwd)


# -- softmax -----------------------------------------------------------------


def softmax(x, axis=-1):
    """Softmax along ``axis``; outputs sum to 1 there and live in (0, 1).

    The max-shift keeps exp() in range; softmax is shift-invariant so it does
    not change the value or the gradient.
    """
    x = as_tensor(x)
    if x.ndim == 0:
        raise ValueError("softmax needs at least one dimension")
    ax = axis if axis >= 0 else x.ndim + axis
    if not 0 <= ax < x.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        _accum(x, out * (g - dot))

    return _result(out, (x,), bwd)


def check_finite(t, context=""):
    """Raise NumericError when a tensor picked up NaN/Inf."""
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {context or 'tensor'}")
    return t
