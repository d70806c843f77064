"""Differentiable primitives over :class:`Tensor`.

Elementwise ops follow numpy broadcasting; gradients are summed back to the
operand shapes. Spatial ops take channels-first maps ``C×H×W`` or a batched
``B×C×H×W``.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import special

from .tensor import Tensor, as_tensor, make_result

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(a, b):
    """Coerce operands to tensors sharing the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b), dtype=a.dtype.type)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a), dtype=b.dtype.type)
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result(out, (a, b), backward)


def maximum_scalar(x: Tensor, floor: float) -> Tensor:
    """Clamp from below; gradient passes only where the input is above the floor."""
    keep = x.data >= floor
    return make_result(np.where(keep, x.data, x.dtype.type(floor)), (x,), lambda g: (g * keep,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def elu_plus_one(x: Tensor) -> Tensor:
    """ELU(x) + 1, evaluated as ``exp(x)`` on the negative side so it never rounds to 0."""
    neg = x.data <= 0
    e = np.exp(np.minimum(x.data, 0))
    out = np.where(neg, e, x.data + 1)
    return make_result(out, (x,), lambda g: (g * np.where(neg, e, 1),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    d = x.data
    cdf = 0.5 * (1.0 + special.erf(d / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * d * d) / math.sqrt(2.0 * math.pi)
    out = (d * cdf).astype(d.dtype, copy=False)
    return make_result(out, (x,), lambda g: ((g * (cdf + d * pdf)).astype(d.dtype, copy=False),))


# -- reductions and shape ----------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                       lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, idx) -> Tensor:
    fancy = any(isinstance(i, (np.ndarray, list)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_result(np.ascontiguousarray(x.data[idx]), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in xs], axis=axis), xs, backward)


def pad(x: Tensor, widths: Sequence[tuple]) -> Tensor:
    """Zero padding; ``widths`` as for :func:`numpy.pad`."""
    widths = [tuple(w) for w in widths]
    crop = tuple(slice(lo, x.shape[i] + lo) for i, (lo, _) in enumerate(widths))
    return make_result(np.pad(x.data, widths), (x,), lambda g: (np.ascontiguousarray(g[crop]),))


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(np.matmul(a.data, b.data), (a, b), backward)


# -- normalisation and softmax -----------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_result(out, (x,),
                       lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return make_result(out, (x,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    red = tuple(range(x.ndim - 1))

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result(out, (x, gamma, beta), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, channel_axis: int = -3,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalisation; in training mode updates running stats in place.

    Statistics reduce over every axis except ``channel_axis``.
    """
    ax = channel_axis % x.ndim
    red = tuple(i for i in range(x.ndim) if i != ax)
    bshape = [1] * x.ndim
    bshape[ax] = x.shape[ax]
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)
    if training:
        n = x.size // x.shape[ax]
        mu = x.data.mean(axis=red, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * unbiased.reshape(-1)
    else:
        mu = running_mean.reshape(bshape).astype(x.dtype)
        xc = x.data - mu
        var = running_var.reshape(bshape).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * g_ + b_

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * g_
            if training:
                gx = inv * (gh - gh.mean(axis=red, keepdims=True)
                            - xhat * (gh * xhat).mean(axis=red, keepdims=True))
            else:
                gx = gh * inv
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result(out, (x, gamma, beta), backward)


# -- spatial -----------------------------------------------------------------

def _out_extent(n: int, k: int, stride: int, pad_: int) -> int:
    return (n + 2 * pad_ - k) // stride + 1


def depthwise_conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad_: int | None = None) -> Tensor:
    """Per-channel 2-D cross-correlation; ``kernels`` is ``C×s×s`` with odd ``s``."""
    c, s, s2 = kernels.shape
    if s != s2 or s % 2 == 0:
        raise ValueError(f"depthwise kernel must be square with odd size, got {kernels.shape[1:]}")
    if pad_ is None:
        pad_ = (s - 1) // 2
    if x.shape[-3] != c:
        raise ValueError(f"channel mismatch: input {x.shape}, kernels {kernels.shape}")
    H, W = x.shape[-2:]
    Ho, Wo = _out_extent(H, s, stride, pad_), _out_extent(W, s, stride, pad_)
    if Ho <= 0 or Wo <= 0:
        raise ValueError("depthwise_conv2d output would be empty")
    lead = [(0, 0)] * (x.ndim - 2)
    xp = np.pad(x.data, lead + [(pad_, pad_), (pad_, pad_)])
    kd = kernels.data
    out = np.zeros(x.shape[:-2] + (Ho, Wo), dtype=x.dtype)
    hs, ws = slice(None), slice(None)
    for i in range(s):
        hs = slice(i, i + stride * (Ho - 1) + 1, stride)
        for j in range(s):
            ws = slice(j, j + stride * (Wo - 1) + 1, stride)
            out += xp[..., hs, ws] * kd[:, i, j][:, None, None]

    def backward(g):
        gx = np.zeros_like(xp) if x.requires_grad else None
        gk = np.zeros_like(kd)
        red = tuple(range(g.ndim - 3)) + (-2, -1)
        for i in range(s):
            hs = slice(i, i + stride * (Ho - 1) + 1, stride)
            for j in range(s):
                ws = slice(j, j + stride * (Wo - 1) + 1, stride)
                gk[:, i, j] = (g * xp[..., hs, ws]).sum(axis=red)
                if gx is not None:
                    gx[..., hs, ws] += g * kd[:, i, j][:, None, None]
        if gx is not None:
            gx = np.ascontiguousarray(gx[..., pad_:pad_ + H, pad_:pad_ + W])
        return gx, gk

    return make_result(out, (x, kernels), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad_: int | None = None) -> Tensor:
    """Dense 2-D cross-correlation. ``x``: (B×)C×H×W, ``weight``: O×C×k×k."""
    o, c, k, _ = weight.shape
    if pad_ is None:
        pad_ = (k - 1) // 2
    if x.shape[-3] != c:
        raise ValueError(f"channel mismatch: input {x.shape}, weight {weight.shape}")
    H, W = x.shape[-2:]
    Ho, Wo = _out_extent(H, k, stride, pad_), _out_extent(W, k, stride, pad_)
    if Ho <= 0 or Wo <= 0:
        raise ValueError("conv2d output would be empty")
    lead = [(0, 0)] * (x.ndim - 2)
    xp = np.pad(x.data, lead + [(pad_, pad_), (pad_, pad_)])
    wd = weight.data
    out = np.zeros(x.shape[:-3] + (o, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        hs = slice(i, i + stride * (Ho - 1) + 1, stride)
        for j in range(k):
            ws = slice(j, j + stride * (Wo - 1) + 1, stride)
            out += np.einsum("oc,...chw->...ohw", wd[:, :, i, j], xp[..., hs, ws], optimize=True)
    if bias is not None:
        out += bias.data[:, None, None]

    def backward(g):
        gx = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wd)
        for i in range(k):
            hs = slice(i, i + stride * (Ho - 1) + 1, stride)
            for j in range(k):
                ws = slice(j, j + stride * (Wo - 1) + 1, stride)
                gw[:, :, i, j] = np.einsum("...ohw,...chw->oc", g, xp[..., hs, ws], optimize=True)
                if gx is not None:
                    gx[..., hs, ws] += np.einsum("oc,...ohw->...chw", wd[:, :, i, j], g, optimize=True)
        if gx is not None:
            gx = np.ascontiguousarray(gx[..., pad_:pad_ + H, pad_:pad_ + W])
        gb = None
        if bias is not None:
            gb = g.sum(axis=tuple(range(g.ndim - 3)) + (-2, -1))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Mean over ``k×k`` windows, no padding."""
    stride = k if stride is None else stride
    H, W = x.shape[-2:]
    if k > H or k > W:
        raise ValueError(f"pool window {k} exceeds extent {(H, W)}")
    Ho, Wo = _out_extent(H, k, stride, 0), _out_extent(W, k, stride, 0)
    out = np.zeros(x.shape[:-2] + (Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += x.data[..., i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride]
    out /= k * k

    def backward(g):
        gx = np.zeros_like(x.data)
        gk = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[..., i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += gk
        return (gx,)

    return make_result(out, (x,), backward)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``n_out×n_in`` interpolation matrix (half-pixel centres, edge clamped)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[o, lo] += 1 - frac
        m[o, hi] += frac
    return m


def resize_bilinear(x: Tensor, size: tuple) -> Tensor:
    """Bilinear resize of the last two axes, expressed as two matmuls."""
    H, W = x.shape[-2:]
    if (H, W) == tuple(size):
        return x
    uh = Tensor(bilinear_matrix(H, size[0]), dtype=x.dtype.type)
    uw = Tensor(bilinear_matrix(W, size[1]).T, dtype=x.dtype.type)
    return matmul(matmul(uh, x), uw)
