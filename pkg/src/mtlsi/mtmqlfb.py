"""Multi-task multi-scale query linear fusion.

Per scale ``s`` every task map goes through a stride-2 depthwise ``s×s`` conv,
BatchNorm and ReLU; the resulting tokens of all tasks (task-major) form the
scale's query source. Keys and values come from 2×2 average-pooled task maps
and are reduced to a single :class:`GlobalContext` that all scales share.
Scale outputs are concatenated, projected back to ``d`` and refined by a
residual MLP.

Task maps are channels-last, ``H×W×d`` or batched ``B×H×W×d``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linear_attention import GlobalContext, build_context, linear_attend, merge_heads, split_heads
from .numerics import ops
from .numerics.nn import MLP, BatchNorm, LayerNorm, Linear, Module, _rng
from .numerics.tensor import Param, Tensor, default_dtype

VALID_SCALES = (1, 3, 5)


@dataclass
class TaskFeature:
    task: str
    tensor: Tensor


@dataclass
class FusedSequence:
    """Fused cross-task tokens, task-major: task ``t`` owns rows ``[t·L, (t+1)·L)``."""

    tensor: Tensor  # (B×)(T·HW/4)×d
    n_tasks: int
    tokens_per_task: int

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    def task_block(self, t: int) -> Tensor:
        lo = t * self.tokens_per_task
        return self.tensor[..., lo:lo + self.tokens_per_task, :]


class ScaleBranch(Module):
    def __init__(self, s: int, n_tasks: int, d: int, rng=None, dtype=None):
        if s % 2 == 0 or s not in VALID_SCALES:
            raise ValueError(f"scale must be one of {VALID_SCALES}, got {s}")
        rng = _rng(rng)
        dtype = dtype or default_dtype()
        self.s = s
        self.kernels = [Param(rng.normal(0.0, np.sqrt(2.0) / s, (d, s, s)), dtype=dtype)
                        for _ in range(n_tasks)]
        self.bns = [BatchNorm(d, dtype=dtype) for _ in range(n_tasks)]
        self.norm = LayerNorm(d, dtype=dtype)
        self.query = Linear(d, d, rng, bias=False, dtype=dtype)


class MTMQLFB(Module):
    def __init__(self, n_tasks: int, d: int, scales: Sequence[int] = VALID_SCALES,
                 heads: int = 4, rng=None, dtype=None):
        if not scales:
            raise ValueError("at least one scale is required")
        if d % heads:
            raise ValueError(f"{heads} heads do not divide width {d}")
        rng = _rng(rng)
        self.n_tasks, self.d, self.heads = n_tasks, d, heads
        self.scales = tuple(scales)
        self.branches = [ScaleBranch(s, n_tasks, d, rng, dtype) for s in self.scales]
        self.kv_norm = LayerNorm(d, dtype=dtype)
        self.key = Linear(d, d, rng, bias=False, dtype=dtype)
        self.value = Linear(d, d, rng, bias=False, dtype=dtype)
        self.out_proj = Linear(len(self.scales) * d, d, rng, bias=False, dtype=dtype)
        self.mlp = MLP(d, 4 * d, rng, dtype=dtype)

    def forward(self, features) -> FusedSequence:
        return mtmqlfb_forward(features, self)


def _stack_inputs(features) -> tuple[list[Tensor], bool]:
    maps = [f.tensor if isinstance(f, TaskFeature) else f for f in features]
    if not maps:
        raise ValueError("no task features given")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("all task features must share H, W, d")
    if len(shape) not in (3, 4):
        raise ValueError(f"task features must be H×W×d or B×H×W×d, got {shape}")
    H, W = shape[-3], shape[-2]
    if H % 2 or W % 2:
        raise ValueError(f"H and W must be even, got {(H, W)}")
    batched = len(shape) == 4
    if not batched:
        maps = [ops.reshape(m, (1,) + shape) for m in maps]
    return maps, batched


def _to_tokens(x: Tensor) -> Tensor:
    """B×C×h×w → B×(h·w)×C."""
    b, c, h, w = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def _unbatch(x: Tensor, batched: bool) -> Tensor:
    return x if batched else ops.reshape(x, x.shape[1:])


def build_scale_features(features, branch: ScaleBranch) -> Tensor:
    """G_s: stride-2 depthwise conv → BN → ReLU per task, tokens concatenated task-major."""
    maps, batched = _stack_inputs(features)
    if len(maps) != len(branch.kernels):
        raise ValueError(f"branch built for {len(branch.kernels)} tasks, got {len(maps)}")
    blocks = []
    for m, kern, bn in zip(maps, branch.kernels, branch.bns):
        x = ops.transpose(m, (0, 3, 1, 2))
        x = ops.relu(bn(ops.depthwise_conv2d(x, kern, stride=2, pad_=(branch.s - 1) // 2)))
        blocks.append(_to_tokens(x))
    return _unbatch(ops.concat(blocks, axis=1), batched)


def pooled_tokens(features) -> Tensor:
    """M: 2×2 average-pooled task maps, tokens concatenated task-major."""
    maps, batched = _stack_inputs(features)
    blocks = [_to_tokens(ops.avg_pool2d(ops.transpose(m, (0, 3, 1, 2)), 2, 2)) for m in maps]
    return _unbatch(ops.concat(blocks, axis=1), batched)


def build_shared_kv(features, block: MTMQLFB) -> tuple[Tensor, Tensor]:
    m = block.kv_norm(pooled_tokens(features))
    return block.key(m), block.value(m)


def shared_context(k: Tensor, v: Tensor, heads: int) -> GlobalContext:
    return build_context(split_heads(k, heads), split_heads(v, heads))


def scale_attend(g: Tensor, gc: GlobalContext, branch: ScaleBranch, heads: int) -> Tensor:
    q = branch.query(branch.norm(g))
    return merge_heads(linear_attend(split_heads(q, heads), gc))


def fuse(outputs: Sequence[Tensor], block: MTMQLFB) -> Tensor:
    shape = outputs[0].shape
    if any(o.shape != shape for o in outputs):
        raise ValueError("all scale outputs must share a shape")
    agg = block.out_proj(ops.concat(list(outputs), axis=-1))
    return agg + block.mlp(agg)


def mtmqlfb_forward(features, block: MTMQLFB) -> FusedSequence:
    maps, _ = _stack_inputs(features)
    H, W = maps[0].shape[1:3]
    k, v = build_shared_kv(features, block)
    gc = shared_context(k, v, block.heads)
    outs = [scale_attend(build_scale_features(features, br), gc, br, block.heads)
            for br in block.branches]
    return FusedSequence(fuse(outs, block), len(maps), H * W // 4)
