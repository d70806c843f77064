"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Param, Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_coords: int
    worst: tuple  # (param index, flat index)

    @property
    def worst_param(self) -> int:
        return self.worst[0]


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(f: Callable[[], Tensor], params: Sequence[Param], h: float = 1e-5,
               n_samples: int | None = None, rng=0, report: bool = False):
    """Compare backprop gradients of scalar ``f()`` against central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call. Coordinates are sampled uniformly over all parameters (all of them
    when ``n_samples`` is None or exceeds the total). Returns the max relative
    error, or a :class:`GradCheckReport` when ``report`` is set.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires 64-bit parameters")
    for p in params:
        p.zero_grad()
    loss = f()
    if loss.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    if n_samples is None or n_samples >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(np.random.default_rng(rng).choice(total, size=n_samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst, worst_at = 0.0, (-1, -1)
    with no_grad():
        for g in flat:
            pi = int(np.searchsorted(offsets, g, side="right") - 1)
            idx = int(g - offsets[pi])
            view = params[pi].data.reshape(-1)
            orig = view[idx]
            view[idx] = orig + h
            fp = f().item()
            view[idx] = orig - h
            fm = f().item()
            view[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError("loss is not finite under perturbation")
            numeric = (fp - fm) / (2 * h)
            err = rel_err(float(analytic[pi].reshape(-1)[idx]), numeric)
            if err > worst:
                worst, worst_at = err, (pi, idx)
    if report:
        return GradCheckReport(worst, len(flat), worst_at)
    return worst
