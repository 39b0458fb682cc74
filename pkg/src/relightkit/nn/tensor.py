"""Taped reverse-mode autodiff on numpy arrays.

Each Tensor remembers its parents and a closure that scatters the incoming
gradient to them.  backward() walks the graph once in reverse topological
order; repeated calls accumulate into .grad (call zero_grad between steps).
Ops keep the dtype of their inputs, so the same graph runs in float32 for
training and float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np


class GraphError(ValueError):
    """Misuse of the autodiff graph (non-scalar backward, shape clash)."""


def _require(cond, message):
    if not cond:
        raise GraphError(message)


class Tensor:
    """A numpy array plus an optional gradient and the taped backward edge."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """Value-identical tensor with no graph edge; gradients stop here."""
        return Tensor(self.data)

    def _accumulate(self, g):
        _require(g.shape == self.data.shape,
                 f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self):
        _require(self.data.ndim == 0 or self.data.size == 1,
                 f"backward needs a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        return mul(self, power(_as_tensor(other), -1.0))

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)


def tensor(data, dtype=np.float32, requires_grad=False):
    """Leaf tensor; float32 by default."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g, shape):
    """Sum the gradient of a broadcast result back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, out, da, db):
    a, b = _as_tensor(a), _as_tensor(b)
    rg = a.requires_grad or b.requires_grad or a._parents or b._parents \
        or a._backward or b._backward
    # keep non-leaf intermediates on the tape; plain constants fall off

    def backward(g):
        if da is not None:
            a._accumulate(_unbroadcast(da(g), a.data.shape))
        if db is not None:
            b._accumulate(_unbroadcast(db(g), b.data.shape))
    return Tensor(out, _parents=(a, b), _backward=backward if rg else None)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _binary(a, b, a.data * b.data,
                   lambda g: g * b.data, lambda g: g * a.data)


def power(a, p):
    a = _as_tensor(a)
    out = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1))
    return Tensor(out, _parents=(a,), _backward=backward)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))
    return Tensor(out, _parents=(a,), _backward=backward)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(a, *shape):
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))
    return Tensor(out, _parents=(a,), _backward=backward)


def transpose(a, *axes):
    a = _as_tensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(g.transpose(inv))
    return Tensor(a.data.transpose(axes), _parents=(a,), _backward=backward)


def take(a, idx):
    """Fancy indexing / slicing with scatter-add backward."""
    a = _as_tensor(a)
    out = a.data[idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a._accumulate(buf)
    return Tensor(out, _parents=(a,), _backward=backward)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)
    return Tensor(out, _parents=tuple(tensors), _backward=backward)


# -- activations ------------------------------------------------------------


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)
    return Tensor(a.data * mask, _parents=(a,), _backward=backward)


def leaky_relu(a, alpha=0.2):
    a = _as_tensor(a)
    slope = np.where(a.data > 0, a.data.dtype.type(1), a.data.dtype.type(alpha))

    def backward(g):
        a._accumulate(g * slope)
    return Tensor(a.data * slope, _parents=(a,), _backward=backward)


def sigmoid(a):
    a = _as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))
    return Tensor(out, _parents=(a,), _backward=backward)


def softplus(a):
    """log(1+exp(x)), computed stably; derivative is the sigmoid."""
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data).astype(a.data.dtype)

    def backward(g):
        s = np.empty_like(a.data)
        pos = a.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        e = np.exp(a.data[~pos])
        s[~pos] = e / (1.0 + e)
        a._accumulate(g * s)
    return Tensor(out, _parents=(a,), _backward=backward)


def maximum(a, b):
    """Elementwise max; gradient routes to the argmax, ties to `a`."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    return _binary(a, b, np.where(take_a, a.data, b.data),
                   lambda g: g * take_a, lambda g: g * ~take_a)


def reduce_max(a, axis, keepdims=False):
    """Max over one axis; gradient goes to the first maximal entry."""
    a = _as_tensor(a)
    out = a.data.max(axis=axis, keepdims=keepdims)
    arg = np.argmax(a.data, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(arg, axis), g, axis)
        a._accumulate(buf)
    return Tensor(out, _parents=(a,), _backward=backward)


def mse(a, b):
    """Mean squared difference over all elements, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    _require(a.data.shape == b.data.shape,
             f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    d = a - b
    return (d * d).mean()


# -- bilinear resampling ----------------------------------------------------

_INTERP_CACHE = {}


def _interp_matrix(n_in, n_out, dtype):
    """Dense (n_out, n_in) bilinear resize matrix, half-pixel centers."""
    key = (n_in, n_out, np.dtype(dtype).str)
    m = _INTERP_CACHE.get(key)
    if m is None:
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        i0 = np.clip(np.floor(x).astype(int), 0, n_in - 1)
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        f = np.clip(x - i0, 0.0, 1.0)
        m = np.zeros((n_out, n_in), dtype=dtype)
        np.add.at(m, (np.arange(n_out), i0), 1.0 - f)
        np.add.at(m, (np.arange(n_out), i1), f)
        _INTERP_CACHE[key] = m
    return m


def resize_bilinear(a, out_h, out_w):
    """Separable bilinear resize of the trailing two axes."""
    a = _as_tensor(a)
    h, w = a.data.shape[-2:]
    mh = _interp_matrix(h, out_h, a.data.dtype)
    mw = _interp_matrix(w, out_w, a.data.dtype)
    out = np.einsum("...hw,Hh,Ww->...HW", a.data, mh, mw)

    def backward(g):
        a._accumulate(np.einsum("...HW,Hh,Ww->...hw", g, mh, mw))
    return Tensor(out, _parents=(a,), _backward=backward)


def upsample2x(a):
    return resize_bilinear(a, 2 * a.data.shape[-2], 2 * a.data.shape[-1])
