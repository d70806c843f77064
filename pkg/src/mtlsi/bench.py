"""Wallclock scaling of linear fusion, window/cross attention and a softmax MHSA baseline."""
from __future__ import annotations

import contextlib
import math
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cwib import CWIB, cwib_forward, softmax_attention
from .mtmqlfb import MTMQLFB, mtmqlfb_forward
from .numerics import ops
from .numerics.nn import Linear
from .numerics.tensor import Tensor, default_dtype, no_grad, precision

HEADER = ("mechanism", "N", "d", "repeats", "median_s", "macs")
MECHANISMS = ("linear", "quadratic-baseline", "cwib")
DEFAULT_SIZES = (256, 1024, 4096, 16384)


@dataclass
class BenchRecord:
    mechanism: str
    N: int
    d: int
    repeats: int
    median_s: float
    macs: int

    def row(self) -> list:
        return [self.mechanism, self.N, self.d, self.repeats, f"{self.median_s:.6e}", self.macs]


@dataclass
class BenchSettings:
    d: int = 16
    heads: int = 2
    tasks: int = 4
    scales: tuple = (1, 3, 5)
    tokens: int = 16
    window: tuple = (8, 8)
    query_chunk: int = 1024
    seed: int = 0


def grid_for(n: int) -> tuple[int, int]:
    """Even H, W with H·W == n, as square as possible."""
    h = int(math.isqrt(n))
    while h > 1 and (n % h or h % 2 or (n // h) % 2):
        h -= 1
    if h < 2 or n % h:
        raise ValueError(f"cannot lay out {n} positions on an even grid")
    return h, n // h


@contextlib.contextmanager
def thread_limit(threads: int | None):
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        yield


def time_call(fn: Callable[[], object], repeats: int) -> float:
    """Median wallclock of ``repeats`` runs after one discarded warm-up run."""
    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def mhsa_baseline(x: Tensor, wq: Linear, wk: Linear, wv: Linear, heads: int, chunk: int) -> Tensor:
    """Global softmax self-attention; queries processed in chunks to bound memory only."""
    q, k, v = wq(x), wk(x), wv(x)
    outs = [softmax_attention(q[lo:lo + chunk], k, v, heads) for lo in range(0, x.shape[0], chunk)]
    return ops.concat(outs, axis=0)


def _macs(mechanism: str, n: int, s: BenchSettings) -> int:
    d, dh = s.d, s.d // s.heads
    if mechanism == "linear":
        kv = 2 * n * d * d + n * d * dh
        per_scale = sum(n * d * k * k + n * d * d + 2 * n * d * dh for k in s.scales)
        fuse = n * len(s.scales) * d * d + 8 * n * d * d
        return kv + per_scale + fuse
    if mechanism == "quadratic-baseline":
        return 3 * n * d * d + 2 * n * n * d
    if mechanism == "cwib":
        area = s.window[0] * s.window[1]
        return n * (3 * d * d + 2 * d * area + d * d + 2 * d * s.tokens + 2 * d * d + 8 * d * d) \
            + 2 * s.tokens * d * d
    raise ValueError(f"unknown mechanism {mechanism!r}")


def _tensor(a) -> Tensor:
    return Tensor(a, dtype=default_dtype())


def _runner(mechanism: str, n: int, s: BenchSettings) -> Callable[[], object]:
    rng = np.random.default_rng(s.seed)
    if mechanism == "linear":
        h, w = grid_for(4 * n // s.tasks)
        block = MTMQLFB(s.tasks, s.d, s.scales, s.heads, rng)
        feats = [_tensor(rng.normal(size=(h, w, s.d))) for _ in range(s.tasks)]
        return lambda: mtmqlfb_forward(feats, block)
    if mechanism == "quadratic-baseline":
        x = _tensor(rng.normal(size=(n, s.d)))
        wq, wk, wv = (Linear(s.d, s.d, rng, bias=False) for _ in range(3))
        return lambda: mhsa_baseline(x, wq, wk, wv, s.heads, s.query_chunk)
    if mechanism == "cwib":
        h, w = grid_for(n)
        block = CWIB(s.d, s.tokens, s.window, s.heads, rng)
        p = _tensor(rng.normal(size=(h, w, s.d)))
        toks = _tensor(rng.normal(size=(s.tokens, s.d)))
        return lambda: cwib_forward(p, toks, block)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def run_bench(sizes: Sequence[int] = DEFAULT_SIZES, repeats: int = 5,
              mechanisms: Sequence[str] = MECHANISMS, settings: BenchSettings | None = None,
              threads: int | None = 1, prec: str = "f32") -> list[BenchRecord]:
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    s = settings or BenchSettings()
    records = []
    with thread_limit(threads), precision(prec), no_grad():
        for mech in mechanisms:
            for n in sizes:
                fn = _runner(mech, n, s)
                records.append(BenchRecord(mech, n, s.d, repeats, time_call(fn, repeats), _macs(mech, n, s)))
    return records


def fit_exponent(ns: Sequence[float], times: Sequence[float]) -> float:
    """Slope of the least-squares line through (log N, log t)."""
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def exponents(records: Sequence[BenchRecord]) -> dict[str, float]:
    out = {}
    for mech in dict.fromkeys(r.mechanism for r in records):
        rs = [r for r in records if r.mechanism == mech]
        if len(rs) >= 2:
            out[mech] = fit_exponent([r.N for r in rs], [r.median_s for r in rs])
    return out


def write_csv(path, records: Sequence[BenchRecord]) -> dict[str, float]:
    import csv

    exps = exponents(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow(r.row())
        fh.write("# loglog_exponent " + " ".join(f"{k}={v:.3f}" for k, v in exps.items()) + "\n")
    return exps


def read_csv(path) -> list[BenchRecord]:
    import csv

    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if tuple(rows[0]) != HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    return [BenchRecord(r[0], int(r[1]), int(r[2]), int(r[3]), float(r[4]), int(r[5])) for r in rows[1:]]
