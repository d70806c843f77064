"""Task-specific semantic token distiller.

A pointwise (kernel-1) conv stack over the transposed fused sequence yields
K×N logits; a softmax over the N original tokens turns each row into a convex
weighting, and the K semantic tokens are those weightings applied to a linear
projection of the sequence.
"""
from __future__ import annotations

from .numerics import ops
from .numerics.nn import BatchNorm, Linear, Module, _rng
from .numerics.tensor import Tensor


class Distiller(Module):
    """Weights for one task: conv1d(d→d) → BN → ReLU → conv1d(d→K), plus ``proj``.

    Both pointwise convs are bias-free: the first feeds BN, and a per-row bias
    on the logits cancels in the softmax over tokens.
    """

    def __init__(self, d: int, k: int, rng=None, zero_init_logits: bool = False, dtype=None):
        rng = _rng(rng)
        self.k = k
        self.conv1 = Linear(d, d, rng, bias=False, dtype=dtype)
        self.bn = BatchNorm(d, channel_axis=-1, dtype=dtype)
        self.conv2 = Linear(d, k, rng, bias=False, dtype=dtype)
        if zero_init_logits:
            self.conv2.weight.data[...] = 0
        else:
            self.conv2.weight.data *= 0.1
        self.proj = Linear(d, d, rng, dtype=dtype)

    def forward(self, i: Tensor) -> Tensor:
        return distill(i, assign(i, self), self)


def assignment_logits(i: Tensor, w: Distiller) -> Tensor:
    """(…)N×d → (…)K×N. Kernel-1 convs over channels are token-wise matmuls."""
    h = ops.relu(w.bn(w.conv1(i)))
    return ops.swap_last(w.conv2(h))


def assign(i: Tensor, w: Distiller) -> Tensor:
    """Row-stochastic K×N assignment: softmax over the N original tokens."""
    n = i.shape[-2]
    if n < w.k:
        raise ValueError(f"sequence of {n} tokens cannot be distilled into {w.k}")
    return ops.softmax(assignment_logits(i, w), axis=-1)


def distill(i: Tensor, a: Tensor, w: Distiller) -> Tensor:
    if a.shape[-1] != i.shape[-2]:
        raise ValueError(f"assignment {a.shape} does not match sequence {i.shape}")
    return ops.matmul(a, w.proj(i))
