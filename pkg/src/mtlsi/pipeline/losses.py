"""Per-task losses: cross-entropy for label maps, mean absolute error for real maps."""
from __future__ import annotations

import numpy as np

from ..numerics import ops
from ..numerics.tensor import NonFiniteError, Tensor
from .config import ModelConfig


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of −log softmax(logits)[target]; logits B×C×H×W, target B×H×W."""
    c = logits.shape[-3]
    target = np.asarray(target)
    if target.max() >= c or target.min() < 0:
        raise ValueError(f"class index outside [0, {c})")
    onehot = (np.arange(c)[:, None, None] == target[..., None, :, :]).astype(logits.dtype)
    picked = ops.sum(ops.log_softmax(logits, axis=-3) * Tensor(onehot), axis=-3)
    return ops.mean(picked) * -1.0


def l1(pred: Tensor, target: np.ndarray) -> Tensor:
    if pred.shape != np.shape(target):
        raise ValueError(f"shape mismatch: {pred.shape} vs {np.shape(target)}")
    return ops.mean(ops.abs(pred - Tensor(np.asarray(target), dtype=pred.dtype.type)))


def task_loss(kind: str, pred: Tensor, target) -> Tensor:
    return cross_entropy(pred, target) if kind == "ce" else l1(pred, target)


def loss_terms(preds, targets: dict, config: ModelConfig) -> dict:
    """Weighted per-task losses, ``{"coarse": {task: Tensor}, "refined": {...}}``."""
    out = {"coarse": {}, "refined": {}}
    for spec, w in zip(config.task_specs, config.loss_weights):
        for head in ("coarse", "refined"):
            out[head][spec.name] = task_loss(spec.loss, getattr(preds, head)[spec.name],
                                             targets[spec.name]) * w
    return out


def total_loss(preds, targets: dict, config: ModelConfig) -> Tensor:
    terms = loss_terms(preds, targets, config)
    total = None
    for head in ("coarse", "refined"):
        for v in terms[head].values():
            total = v if total is None else total + v
    if not np.isfinite(total.data).all():
        raise NonFiniteError("loss is not finite")
    return total
