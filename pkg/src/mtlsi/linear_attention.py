"""Kernelized linear attention with the ELU+1 feature map.

``build_context`` reduces keys and values to a query-independent summary once;
``linear_attend`` then costs O(N_q·d²) per query set. ``naive_kernel_attend``
materialises the full N_q×N weight matrix and serves as the quadratic oracle.
All functions accept extra leading (batch / head) axes.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import faults
from .numerics import ops
from .numerics.tensor import Tensor

EPS_DIV = 1e-6


@dataclass(frozen=True)
class GlobalContext:
    ctx: Tensor   # (..., d, d_v)  phi(K)^T V
    norm: Tensor  # (..., d)       column sums of phi(K)


def phi(x: Tensor) -> Tensor:
    return ops.elu_plus_one(x)


def build_context(k: Tensor, v: Tensor) -> GlobalContext:
    if k.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"key/value token mismatch: {k.shape} vs {v.shape}")
    fk = phi(k)
    return GlobalContext(ops.matmul(ops.swap_last(fk), v), ops.sum(fk, axis=-2))


def linear_attend(q: Tensor, gc: GlobalContext) -> Tensor:
    if q.shape[-1] != gc.norm.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} does not match context width {gc.norm.shape[-1]}")
    fq = phi(q)
    num = ops.matmul(fq, gc.ctx)
    den = ops.matmul(fq, ops.reshape(gc.norm, gc.norm.shape + (1,)))
    return num / ops.maximum_scalar(den, EPS_DIV)


def naive_kernel_attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Quadratic reference: explicit row-normalised phi(q) phi(k)^T weights."""
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    w = ops.matmul(phi(q), ops.swap_last(phi(k)))
    w = w / ops.sum(w, axis=-1, keepdims=True)
    return ops.matmul(w, v)


def linear_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``linear_attend(q, build_context(k, v))``; honours the linear-attention faults."""
    if faults.active("swap-qk"):
        q, k = k, q
    gc = build_context(k, v)
    if faults.active("skip-norm"):
        return ops.matmul(phi(q), gc.ctx)
    return linear_attend(q, gc)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., N, d) → (..., heads, N, d/heads)."""
    *lead, n, d = x.shape
    if d % heads:
        raise ValueError(f"{heads} heads do not divide width {d}")
    x = ops.reshape(x, tuple(lead) + (n, heads, d // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ops.transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    """Inverse of :func:`split_heads`."""
    *lead, h, n, dh = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ops.reshape(ops.transpose(x, axes), tuple(lead) + (n, h * dh))
