"""Training loop, loss traces and checkpoints."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics.optim import OptimizerState, optimizer_step
from ..numerics.tensor import NonFiniteError, Tensor, no_grad
from . import container
from .config import ModelConfig
from .data import Sample, collate
from .losses import loss_terms
from .model import MTLSINet, full_forward

log = logging.getLogger(__name__)

TRACE_HEADER = ("step", "coarse_loss", "refined_loss", "total_loss")


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict           # model params and buffers
    optimizer: OptimizerState
    step: int
    version: int = container.VERSION

    def save(self, path) -> None:
        tensors = dict(self.state)
        opt = self.optimizer
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            tensors[f"opt.m.{i}"] = m
            tensors[f"opt.v.{i}"] = v
        tensors["opt.scalars"] = np.array([opt.lr, opt.weight_decay, opt.betas[0], opt.betas[1],
                                           opt.eps, opt.power], dtype=np.float64)
        tensors["opt.counters"] = np.array([opt.step, opt.total_steps, len(opt.m), self.step],
                                           dtype=np.int64)
        container.save(path, self.config.to_text(), tensors)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        text, tensors = container.load(path)
        config = ModelConfig.from_text(text)
        lr, wd, b1, b2, eps, power = (float(x) for x in tensors.pop("opt.scalars"))
        opt_step, total, n_moments, step = (int(x) for x in tensors.pop("opt.counters"))
        m = [tensors.pop(f"opt.m.{i}") for i in range(n_moments)]
        v = [tensors.pop(f"opt.v.{i}") for i in range(n_moments)]
        opt = OptimizerState(lr=lr, total_steps=total, weight_decay=wd, betas=(b1, b2), eps=eps,
                             power=power, step=opt_step, m=m, v=v)
        return cls(config, tensors, opt, step)

    def build_model(self) -> MTLSINet:
        net = MTLSINet(self.config)
        net.load_state_dict(self.state)
        return net


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list = field(default_factory=list)  # rows of (step, coarse, refined, total)
    model: MTLSINet | None = None

    def write_trace(self, path) -> None:
        write_trace(path, self.trace)


def write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for step, c, r, t in rows:
            w.writerow([step, repr(float(c)), repr(float(r)), repr(float(t))])


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic in (seed, step) so resumed runs draw identical batches."""
    if n <= batch_size:
        return np.arange(n)
    return np.sort(np.random.default_rng([seed, step]).choice(n, size=batch_size, replace=False))


def train(config: ModelConfig, dataset: list[Sample], steps: int, *, resume: Checkpoint | None = None,
          stop_at: int | None = None) -> TrainResult:
    """Run until ``stop_at`` (default ``steps``) with a schedule of length ``steps``.

    With ``resume`` the model, optimizer and step counter continue from the
    checkpoint and ``steps`` must match its schedule length.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    config.validate()
    if resume is not None:
        net = resume.build_model()
        opt = resume.optimizer
        start = resume.step
        if opt.total_steps != steps:
            raise ValueError(f"checkpoint schedule has {opt.total_steps} steps, asked for {steps}")
    else:
        net = MTLSINet(config)
        opt = OptimizerState(lr=config.lr, total_steps=steps, weight_decay=config.weight_decay)
        start = 0
    end = steps if stop_at is None else min(stop_at, steps)
    params = net.parameters()
    net.train()
    trace = []
    for step in range(start, end):
        idx = batch_indices(len(dataset), config.batch_size, config.seed, step)
        images, targets = collate([dataset[i] for i in idx], config.tasks)
        net.zero_grad()
        try:
            # overflow surfaces as NonFiniteError below, so numpy's warnings add nothing
            with np.errstate(over="ignore", invalid="ignore"):
                preds = full_forward(Tensor(images, dtype=net.dtype), net)
                terms = loss_terms(preds, targets, config)
        except NonFiniteError:
            raise DivergenceError(step) from None
        coarse = sum(terms["coarse"].values(), start=Tensor(np.zeros((), net.dtype)))
        refined = sum(terms["refined"].values(), start=Tensor(np.zeros((), net.dtype)))
        total = coarse + refined
        if not np.isfinite(total.data):
            raise DivergenceError(step)
        total.backward()
        optimizer_step(opt, params)
        trace.append((step, coarse.item(), refined.item(), total.item()))
        log.debug("step %d total %.5f", step, total.item())
    ckpt = Checkpoint(config, net.state_dict(), opt, end)
    return TrainResult(ckpt, trace, net)


def evaluate(net: MTLSINet, dataset: list[Sample]) -> dict:
    """Per-task refined and coarse losses in eval mode over the whole set."""
    cfg = net.config
    images, targets = collate(dataset, cfg.tasks)
    net.eval()
    with no_grad():
        terms = loss_terms(full_forward(Tensor(images, dtype=net.dtype), net), targets, cfg)
    net.train()
    return {head: {k: v.item() for k, v in d.items()} for head, d in terms.items()}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    ckpt.save(path)


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.load(Path(path))
