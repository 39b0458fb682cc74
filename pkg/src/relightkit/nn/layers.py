"""Convolution layers (2D/3D via shared N-d im2col), Module tree, Adam.

Convolutions gather input windows through a cached flat-index table and run
one matmul; the backward pass scatter-adds through the same table, so both
directions are plain vectorized numpy with deterministic reduction order.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, GraphError, _require

_COL_CACHE = {}


def _conv_plan(channels, in_spatial, kernel, stride, padding):
    """Cached (flat gather indices, padded shape, output shape) for im2col."""
    key = (channels, in_spatial, kernel, stride, padding)
    plan = _COL_CACHE.get(key)
    if plan is not None:
        return plan
    padded = tuple(n + 2 * p for n, p in zip(in_spatial, padding))
    out = tuple((pn - k) // s + 1 for pn, k, s in zip(padded, kernel, stride))
    _require(all(pn >= k for pn, k in zip(padded, kernel)),
             f"input {in_spatial} too small for kernel {kernel} pad {padding}")
    koffs = np.stack(np.meshgrid(*[np.arange(k) for k in kernel],
                                 indexing="ij"), -1).reshape(-1, len(kernel))
    opos = np.stack(np.meshgrid(*[np.arange(o) for o in out],
                                indexing="ij"), -1).reshape(-1, len(out))
    pos = opos[None, :, :] * np.array(stride) + koffs[:, None, :]   # (K, L, nd)
    flat = np.ravel_multi_index(tuple(pos[..., i] for i in range(pos.shape[-1])),
                                padded)                             # (K, L)
    span = int(np.prod(padded))
    idx = (np.arange(channels)[:, None, None] * span + flat[None]) \
        .reshape(channels * flat.shape[0], flat.shape[1])
    plan = (idx, padded, out)
    _COL_CACHE[key] = plan
    return plan


def _conv_nd(x, weight, bias, stride, padding):
    """Cross-correlation of (N, C, *spatial) with (O, C, *kernel) weights."""
    _require(isinstance(x, Tensor), "conv input must be a Tensor")
    nd = weight.data.ndim - 2
    _require(x.data.ndim == nd + 2,
             f"conv{nd}d input must be (N, C, spatial), got {x.data.shape}")
    n, c = x.data.shape[:2]
    _require(c == weight.data.shape[1],
             f"channel mismatch: input {x.data.shape} vs weight {weight.data.shape}")
    kernel = weight.data.shape[2:]
    idx, padded, out = _conv_plan(c, x.data.shape[2:], kernel,
                                  tuple(stride), tuple(padding))
    o = weight.data.shape[0]
    span = int(np.prod(padded))

    pad_width = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x.data, pad_width)
    cols = xp.reshape(n, c * span)[:, idx]                 # (N, CK, L)
    w2 = weight.data.reshape(o, -1)                        # (O, CK)
    y = np.einsum("ok,nkl->nol", w2, cols) + bias.data[None, :, None]
    y = y.reshape(n, o, *out)

    def backward(g):
        g2 = g.reshape(n, o, -1)
        weight._accumulate(np.einsum("nol,nkl->ok", g2, cols)
                           .reshape(weight.data.shape))
        bias._accumulate(g2.sum(axis=(0, 2)))
        dcols = np.einsum("ok,nol->nkl", w2, g2)
        dxp = np.zeros((n, c * span), dtype=x.data.dtype)
        np.add.at(dxp, (np.arange(n)[:, None, None], idx[None]), dcols)
        dxp = dxp.reshape(xp.shape)
        crop = (slice(None), slice(None)) + tuple(
            slice(p, p + s) for p, s in zip(padding, x.data.shape[2:]))
        x._accumulate(dxp[crop])
    return Tensor(y, _parents=(x, weight, bias), _backward=backward)


class Module:
    """Plain attribute-walking module tree; parameters are Tensor leaves."""

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{key}.")
            elif isinstance(val, (list, tuple)):
                yield from self._walk_sequence(val, key)

    def _walk_sequence(self, seq, prefix):
        for i, item in enumerate(seq):
            if isinstance(item, Module):
                yield from item.named_parameters(f"{prefix}.{i}.")
            elif isinstance(item, (list, tuple)):
                yield from self._walk_sequence(item, f"{prefix}.{i}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def _he_init(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, rng=None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        k = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        self.stride = (stride, stride) if np.isscalar(stride) else tuple(stride)
        self.padding = (padding, padding) if np.isscalar(padding) else tuple(padding)
        fan_in = in_ch * int(np.prod(k))
        self.weight = Tensor(_he_init(rng, (out_ch, in_ch) + k, fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return _conv_nd(x, self.weight, self.bias, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, rng=None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        k = (kernel,) * 3 if np.isscalar(kernel) else tuple(kernel)
        self.stride = (stride,) * 3 if np.isscalar(stride) else tuple(stride)
        self.padding = (padding,) * 3 if np.isscalar(padding) else tuple(padding)
        fan_in = in_ch * int(np.prod(k))
        self.weight = Tensor(_he_init(rng, (out_ch, in_ch) + k, fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return _conv_nd(x, self.weight, self.bias, self.stride, self.padding)


class Adam:
    """Standard Adam with bias correction; state indexed by parameter id."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self):
        """Flat list of optimizer state arrays for checkpointing."""
        return self.m + self.v

    def load_state(self, arrays, t):
        n = len(self.params)
        _require(len(arrays) == 2 * n, "optimizer state length mismatch")
        self.m = [np.array(a) for a in arrays[:n]]
        self.v = [np.array(a) for a in arrays[n:]]
        self.t = int(t)
