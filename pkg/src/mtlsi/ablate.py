"""Toy-scale ablation protocols: semantic token count and query-scale sets."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .linear_attention import linear_attention, merge_heads, split_heads
from .mtmqlfb import MTMQLFB, mtmqlfb_forward, pooled_tokens, _stack_inputs
from .numerics import ops
from .numerics.tensor import Tensor, no_grad, precision
from .pipeline.config import ModelConfig
from .pipeline.data import synth_dataset
from .pipeline.model import fuse_inputs
from .pipeline.train import evaluate, train

AXES = {
    "tokens": [("K=8", {"tokens": 8}), ("K=16", {"tokens": 16}), ("K=32", {"tokens": 32})],
    "scales": [("s=1", {"scales": (1,)}), ("s=3", {"scales": (3,)}), ("s=5", {"scales": (5,)}),
               ("s=1+3+5", {"scales": (1, 3, 5)})],
}


@dataclass
class AblationRow:
    axis: str
    setting: str
    seed: int
    steps: int
    losses: dict  # task → refined-head loss on the held-out set
    total: float


def header(tasks) -> list[str]:
    return ["axis", "setting", "seed", "steps"] + [f"loss_{t}" for t in tasks] + ["total_loss"]


def plain_linear_path(features, block: MTMQLFB) -> Tensor:
    """Single-scale (s=1) fusion written as ordinary linear attention.

    A 1×1 depthwise conv at stride 2 is a per-channel scale of the strided
    subsample, so queries here are built pointwise from ``F[::2, ::2]`` with
    no convolution machinery, then passed through the generic
    ``linear_attention`` with the block's own weights.
    """
    if block.scales != (1,):
        raise ValueError("the plain path only exists for the single 1×1 scale")
    maps, batched = _stack_inputs(features)
    br = block.branches[0]
    toks = []
    for m, kern, bn in zip(maps, br.kernels, br.bns):
        x = ops.transpose(m[:, ::2, ::2, :], (0, 3, 1, 2)) * ops.reshape(kern, (kern.shape[0], 1, 1))
        x = ops.relu(bn(x))
        b, c, h, w = x.shape
        toks.append(ops.reshape(ops.transpose(x, (0, 2, 3, 1)), (b, h * w, c)))
    g = ops.concat(toks, axis=1)
    mem = block.kv_norm(pooled_tokens(maps))
    q = split_heads(br.query(br.norm(g)), block.heads)
    k = split_heads(block.key(mem), block.heads)
    v = split_heads(block.value(mem), block.heads)
    agg = block.out_proj(merge_heads(linear_attention(q, k, v)))
    out = agg + block.mlp(agg)
    return out if batched else ops.reshape(out, out.shape[1:])


def degeneration_gap(net, images: np.ndarray) -> float:
    """Max relative gap between the block and :func:`plain_linear_path` on real fused inputs."""
    cfg = net.config
    with no_grad():
        net.eval()
        x = Tensor(images, dtype=net.dtype)
        pyramid = net.backbone(x)
        feats = []
        for t, spec in enumerate(cfg.task_specs):
            p, c = net.prelim[t](pyramid)
            feats.append(fuse_inputs(p, c, net.fuse_in[t], spec.name))
        a = mtmqlfb_forward(feats, net.fusion).tensor.data
        b = plain_linear_path([f.tensor for f in feats], net.fusion).data
        net.train()
    return float(np.abs(a - b).max() / max(np.abs(a).max(), 1e-30))


def run_ablation(axis: str, base: ModelConfig | None = None, steps: int = 40, n_train: int = 8,
                 n_eval: int = 4, seed: int = 0) -> tuple[list[AblationRow], dict]:
    """Matched trainings differing only along ``axis``; returns rows and extra diagnostics."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    base = (base or ModelConfig()).replace(seed=seed)
    train_set = synth_dataset(seed, n_train, base)
    eval_set = synth_dataset(seed + 10_000, n_eval, base)
    rows, extra = [], {}
    for label, change in AXES[axis]:
        cfg = base.replace(**change).validate()
        with precision(cfg.precision):
            result = train(cfg, train_set, steps)
            losses = evaluate(result.model, eval_set)["refined"]
            if axis == "scales" and cfg.scales == (1,):
                extra["degeneration_gap"] = degeneration_gap(
                    result.model, np.stack([s.image for s in eval_set]))
        rows.append(AblationRow(axis, label, seed, steps, losses, float(sum(losses.values()))))
    return rows, extra


def write_csv(path, rows: list[AblationRow], extra: dict | None = None) -> None:
    tasks = list(rows[0].losses)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header(tasks))
        for r in rows:
            w.writerow([r.axis, r.setting, r.seed, r.steps] + [f"{r.losses[t]:.6f}" for t in tasks]
                       + [f"{r.total:.6f}"])
        for k, v in (extra or {}).items():
            fh.write(f"# {k} = {v:.3e}\n")
