"""AdamW with a polynomial learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Param

POLY_POWER = 0.9


@dataclass
class OptimizerState:
    lr: float
    total_steps: int
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    power: float = POLY_POWER
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def lr_at(self, t: int) -> float:
        if t >= self.total_steps:
            raise ValueError(f"step {t} is beyond the schedule length {self.total_steps}")
        return self.lr * (1.0 - t / self.total_steps) ** self.power


def optimizer_step(state: OptimizerState, params: Sequence[Param]) -> None:
    """One AdamW update in place; weight decay is decoupled from the moments."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    lr = state.lr_at(state.step)
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p.data -= (lr * state.weight_decay) * p.data
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
