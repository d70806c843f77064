"""Invariant suite behind ``mtlsi verify``; every check runs in float64."""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import oracles
from .cwib import CWIB, WindowGrid, cross_attend, cwib_forward, merge, partition, wmsa
from .distiller import Distiller, assign, distill
from .linear_attention import build_context, linear_attend, linear_attention, naive_kernel_attend
from .mtmqlfb import MTMQLFB, build_scale_features, build_shared_kv, mtmqlfb_forward, scale_attend, shared_context
from .numerics import ops
from .numerics.gradcheck import grad_check
from .numerics.tensor import Tensor, precision

GRAD_TOL = 1e-4
GRAD_COORDS = 200


@dataclass
class Property:
    group: str
    name: str
    fn: Callable[[int], tuple[bool, str]]


@dataclass
class Outcome:
    group: str
    name: str
    ok: bool
    detail: str


REGISTRY: list[Property] = []


def prop(group: str, name: str):
    def deco(fn):
        REGISTRY.append(Property(group, name, fn))
        return fn
    return deco


def groups() -> list[str]:
    return list(dict.fromkeys(p.group for p in REGISTRY))


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def rel_inf(a, b) -> float:
    a, b = np.asarray(getattr(a, "data", a)), np.asarray(getattr(b, "data", b))
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


# -- numerics ----------------------------------------------------------------

@prop("numerics", "matmul matches triple loop")
def _matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 4))
    err = rel_inf(ops.matmul(_t(a), _t(b)), oracles.matmul_loops(a, b))
    return err <= 1e-12, f"rel err {err:.2e}"


@prop("numerics", "depthwise conv matches nested loops")
def _dw(seed):
    rng = np.random.default_rng(seed)
    x, k = rng.normal(size=(2, 6, 6)), rng.normal(size=(2, 3, 3))
    err = rel_inf(ops.depthwise_conv2d(_t(x), _t(k), stride=2), oracles.depthwise_conv_loops(x, k, 2, 1))
    return err <= 1e-12, f"rel err {err:.2e}"


@prop("numerics", "avg pool matches direct summation")
def _pool(seed):
    x = np.random.default_rng(seed).normal(size=(1, 4, 4))
    err = rel_inf(ops.avg_pool2d(_t(x), 2, 2), oracles.avg_pool_loops(x, 2, 2))
    return err <= 1e-12, f"rel err {err:.2e}"


@prop("numerics", "softmax slices positive and sum to one")
def _softmax(seed):
    x = np.random.default_rng(seed).normal(size=(3, 5)) * 10
    s = ops.softmax(_t(x), axis=1).data
    err = float(np.abs(s.sum(axis=1) - 1).max())
    ok = err <= 1e-6 and (s > 0).all() and rel_inf(s, oracles.softmax_direct(x, 1)) <= 1e-6
    return ok, f"sum err {err:.2e}"


@prop("numerics", "grad_check of sum of squares")
def _gc_quad(seed):
    from .numerics.tensor import Param

    p = Param(np.array([0.5, -1.25, 2.0]) + np.random.default_rng(seed).uniform(0, 0.1, 3), dtype=np.float64)
    err = grad_check(lambda: ops.sum(p * p), [p])
    return err <= 1e-9, f"max rel err {err:.2e}"


# -- linear attention --------------------------------------------------------

def linear_equivalence(seed: int, n_instances: int = 100, prec: str = "f64") -> float:
    """Worst ‖fast − naive‖∞/‖naive‖∞ over random instances (N ≤ 64, d ≤ 32)."""
    rng = np.random.default_rng(seed)
    dt = np.float64 if prec == "f64" else np.float32
    worst = 0.0
    for _ in range(n_instances):
        n, d = int(rng.integers(1, 65)), int(rng.integers(1, 33))
        q, k, v = (Tensor(rng.normal(size=(n, d)), dtype=dt) for _ in range(3))
        fast = linear_attention(q, k, v).data.astype(np.float64)
        ref = oracles.kernel_attention_ref(q, k, v)
        worst = max(worst, rel_inf(fast, ref))
    return worst


@prop("linear-attn", "oracle equivalence 64-bit (100 instances)")
def _lin64(seed):
    err = linear_equivalence(seed)
    return err <= 1e-10, f"worst rel err {err:.2e}"


@prop("linear-attn", "oracle equivalence 32-bit (100 instances)")
def _lin32(seed):
    err = linear_equivalence(seed, prec="f32")
    return err <= 1e-5, f"worst rel err {err:.2e}"


@prop("linear-attn", "fast path matches naive_kernel_attend")
def _lin_naive(seed):
    rng = np.random.default_rng(seed)
    q, k, v = (_t(rng.normal(size=(32, 8))) for _ in range(3))
    err = rel_inf(linear_attend(q, build_context(k, v)), naive_kernel_attend(q, k, v))
    return err <= 1e-10, f"rel err {err:.2e}"


@prop("linear-attn", "context is query independent")
def _lin_qind(seed):
    rng = np.random.default_rng(seed)
    k, v = _t(rng.normal(size=(16, 8))), _t(rng.normal(size=(16, 8)))
    gc = build_context(k, v)
    before = (gc.ctx.data.copy(), gc.norm.data.copy())
    for nq in (1, 5, 40):
        linear_attend(_t(rng.normal(size=(nq, 8))), gc)
    again = build_context(k, v)
    ok = all(np.array_equal(a, b) for a, b in zip(before, (gc.ctx.data, gc.norm.data))) \
        and np.array_equal(again.ctx.data, before[0]) and np.array_equal(again.norm.data, before[1])
    return ok, "bitwise" if ok else "context changed"


@prop("linear-attn", "outputs inside value envelope")
def _lin_env(seed):
    rng = np.random.default_rng(seed)
    q, k, v = (_t(rng.normal(size=(24, 6))) for _ in range(3))
    out = linear_attention(q, k, v).data
    lo, hi = v.data.min(axis=0), v.data.max(axis=0)
    slack = 1e-12
    ok = bool(((out >= lo - slack) & (out <= hi + slack)).all())
    return ok, "inside" if ok else "outside envelope"


# -- MT-MQLFB ----------------------------------------------------------------

def mtmqlfb_equivalence(seed: int, configs=((2, 4, 8), (3, 8, 16), (4, 16, 16))) -> float:
    """Worst rel err of the block against the quadratic numpy recomposition, over (T, H=W, d)."""
    worst = 0.0
    for j, (T, hw, d) in enumerate(configs):
        rng = np.random.default_rng([seed, j])
        block = MTMQLFB(T, d, (1, 3, 5), heads=2, rng=rng, dtype=np.float64)
        feats = [_t(rng.normal(size=(hw, hw, d))) for _ in range(T)]
        worst = max(worst, rel_inf(mtmqlfb_forward(feats, block).tensor, oracles.mtmqlfb_ref(feats, block)))
    return worst


@prop("mtmqlfb", "block equals quadratic recomposition")
def _mtm_eq(seed):
    err = mtmqlfb_equivalence(seed)
    return err <= 1e-9, f"worst rel err {err:.2e}"


def context_reuse_identical(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    block = MTMQLFB(2, 16, (1, 3, 5), heads=4, rng=rng, dtype=np.float64)
    feats = [_t(rng.normal(size=(8, 8, 16))) for _ in range(2)]
    k, v = build_shared_kv(feats, block)
    shared = shared_context(k, v, block.heads)
    ok = True
    for br in block.branches:
        g = build_scale_features(feats, br)
        k2, v2 = build_shared_kv(feats, block)
        fresh = shared_context(k2, v2, block.heads)
        ok &= np.array_equal(scale_attend(g, shared, br, block.heads).data,
                             scale_attend(g, fresh, br, block.heads).data)
    return bool(ok)


@prop("mtmqlfb", "shared context equals per-scale recomputation (bitwise)")
def _mtm_reuse(seed):
    ok = context_reuse_identical(seed)
    return ok, "bitwise" if ok else "differs"


def single_scale_gap(seed: int) -> float:
    """The s=1 block against a plain linear-attention path sharing its weights."""
    from .ablate import plain_linear_path

    rng = np.random.default_rng(seed)
    block = MTMQLFB(3, 16, (1,), 4, rng, np.float64)
    feats = [_t(rng.normal(size=(2, 8, 6, 16))) for _ in range(3)]
    return rel_inf(mtmqlfb_forward(feats, block).tensor, plain_linear_path(feats, block))


@prop("mtmqlfb", "single scale reduces to plain linear attention")
def _mtm_degenerate(seed):
    err = single_scale_gap(seed)
    return err <= 1e-12, f"rel err {err:.2e}"


# -- distiller ---------------------------------------------------------------

def distiller_structure(seed: int, n_instances: int = 100) -> tuple[float, bool]:
    """(worst |row sum − 1|, envelope holds everywhere) over random instances."""
    rng = np.random.default_rng(seed)
    worst, env = 0.0, True
    for _ in range(n_instances):
        n, d = int(rng.integers(4, 40)), int(rng.integers(2, 17))
        k = int(rng.integers(1, n))
        w = Distiller(d, k, rng, dtype=np.float64)
        w.conv2.weight.data[...] = rng.normal(size=w.conv2.weight.shape) * 3
        i = _t(rng.normal(size=(n, d)))
        a = assign(i, w)
        toks = distill(i, a, w).data
        worst = max(worst, float(np.abs(a.data.sum(axis=-1) - 1).max()))
        proj = w.proj(i).data
        env &= bool(((toks >= proj.min(axis=0) - 1e-12) & (toks <= proj.max(axis=0) + 1e-12)).all())
        env &= bool((a.data > 0).all())
    return worst, env


@prop("distiller", "rows stochastic and tokens within envelope")
def _dist(seed):
    err, env = distiller_structure(seed)
    return err <= 1e-6 and env, f"row-sum err {err:.2e}, envelope {'ok' if env else 'violated'}"


@prop("distiller", "matches dense recomputation")
def _dist_ref(seed):
    rng = np.random.default_rng(seed)
    w = Distiller(8, 4, rng, dtype=np.float64)
    i = _t(rng.normal(size=(24, 8)))
    a = assign(i, w)
    ra, rt = oracles.distiller_ref(i, w)
    err = max(rel_inf(a, ra), rel_inf(distill(i, a, w), rt))
    return err <= 1e-10, f"rel err {err:.2e}"


# -- CWIB --------------------------------------------------------------------

def roundtrip_exact(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    ok = True
    for H, W, win in ((4, 4, (2, 2)), (5, 5, (2, 2)), (7, 9, (3, 4)), (6, 6, (6, 6))):
        x = _t(rng.normal(size=(H, W, 3)))
        ok &= np.array_equal(merge(partition(x, WindowGrid(H, W, win)), WindowGrid(H, W, win)).data, x.data)
    return bool(ok)


@prop("cwib", "partition/merge round trip exact")
def _rt(seed):
    ok = roundtrip_exact(seed)
    return ok, "exact" if ok else "mismatch"


def global_window_error(seed: int, heads: int = 4) -> float:
    rng = np.random.default_rng(seed)
    H, W, d = 6, 5, 16
    blk = CWIB(d, 4, (H, W), heads, rng, dtype=np.float64)
    p = _t(rng.normal(size=(H, W, d)))
    ln = oracles.layer_norm_ref(p, blk.norm.gamma, blk.norm.beta).reshape(-1, d)
    ref = oracles.softmax_attention_ref(oracles.linear_ref(ln, blk.query), oracles.linear_ref(ln, blk.key_w),
                                        oracles.linear_ref(ln, blk.value_w), heads)
    return rel_inf(wmsa(p, blk).data.reshape(-1, d), ref)


@prop("cwib", "single-window W-MSA equals global MHSA")
def _glob(seed):
    err = global_window_error(seed)
    return err <= 1e-6, f"rel err {err:.2e}"


def permutation_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d, K = 16, 6
    blk = CWIB(d, K, (2, 2), 4, rng, dtype=np.float64)
    p = _t(rng.normal(size=(4, 4, d)))
    toks, e = rng.normal(size=(K, d)), rng.normal(size=(K, d))
    perm = rng.permutation(K)
    a = cross_attend(p, _t(toks), _t(e), blk)
    b = cross_attend(p, _t(toks[perm]), _t(e[perm]), blk)
    return rel_inf(b, a)


@prop("cwib", "cross-attention invariant to joint token permutation")
def _perm(seed):
    err = permutation_error(seed)
    return err <= 1e-5, f"rel err {err:.2e}"


@prop("cwib", "block matches per-window explicit oracle (padded grid)")
def _cwib_ref(seed):
    rng = np.random.default_rng(seed)
    blk = CWIB(16, 4, (3, 3), 2, rng, dtype=np.float64)
    p, toks = _t(rng.normal(size=(7, 8, 16))), _t(rng.normal(size=(4, 16)))
    err = rel_inf(cwib_forward(p, toks, blk), oracles.cwib_ref(p, toks, blk))
    return err <= 1e-10, f"rel err {err:.2e}"


# -- gradient checks -----------------------------------------------------------

def frozen_stats(module, rng) -> None:
    """Eval-mode BN with random running statistics.

    Train-mode BN cancels any per-channel rescaling of its input, so a 1×1
    depthwise kernel feeding it has a gradient of order eps/var and a relative
    finite-difference error dominated by roundoff. Parameter checks therefore
    run on frozen statistics; train-mode BN is checked at the op level and
    through input gradients.
    """
    for m in module.modules():
        if hasattr(m, "running_var"):
            m.eval()
            m.running_mean[...] = rng.normal(0.0, 0.3, m.running_mean.shape)
            m.running_var[...] = rng.uniform(0.5, 2.0, m.running_var.shape)


def gradcheck_mtmqlfb(seed: int, coords: int = GRAD_COORDS, report: bool = False):
    rng = np.random.default_rng(seed)
    block = MTMQLFB(2, 8, (1, 3, 5), heads=2, rng=rng, dtype=np.float64)
    frozen_stats(block, rng)
    feats = [_t(rng.normal(size=(8, 8, 8))) for _ in range(2)]
    w = _t(rng.normal(size=(32, 8)))
    return grad_check(lambda: ops.sum(mtmqlfb_forward(feats, block).tensor * w), block.parameters(),
                      n_samples=coords, rng=seed, report=report)


def gradcheck_distiller(seed: int, coords: int = GRAD_COORDS, report: bool = False):
    rng = np.random.default_rng(seed)
    dist = Distiller(12, 4, rng, dtype=np.float64)  # 372 parameters
    dist.conv2.weight.data[...] = rng.normal(size=dist.conv2.weight.shape)
    frozen_stats(dist, rng)
    i, w = _t(rng.normal(size=(24, 12))), _t(rng.normal(size=(4, 12)))
    return grad_check(lambda: ops.sum(dist(i) * w), dist.parameters(), n_samples=coords, rng=seed, report=report)


def gradcheck_cwib(seed: int, coords: int = GRAD_COORDS, report: bool = False):
    rng = np.random.default_rng(seed)
    blk = CWIB(8, 4, (4, 4), 2, rng, dtype=np.float64)
    p, toks = _t(rng.normal(size=(8, 8, 8))), _t(rng.normal(size=(4, 8)))
    w = _t(rng.normal(size=(8, 8, 8)))
    return grad_check(lambda: ops.sum(cwib_forward(p, toks, blk) * w), blk.parameters(),
                      n_samples=coords, rng=seed, report=report)


def gradcheck_heads(seed: int, coords: int = GRAD_COORDS, report: bool = False):
    """Backbone, preliminary/output decoders and input projections through the total loss."""
    from .pipeline import ModelConfig, MTLSINet, synth_dataset, total_loss
    from .pipeline.data import collate

    cfg = ModelConfig(image_size=(16, 16), d=8, heads=2, tokens=4, window=(2, 2),
                      backbone_width=4, precision="f64", seed=seed).validate()
    net = MTLSINet(cfg)
    frozen_stats(net, np.random.default_rng(seed))
    images, targets = collate(synth_dataset(seed, 2, cfg), cfg.tasks)
    x = _t(images)
    params = [p for name, p in net.named_parameters()
              if name.split(".")[0] in ("backbone", "prelim", "fuse_in", "decoders")]
    return grad_check(lambda: total_loss(net(x), targets, cfg), params, n_samples=coords, rng=seed, report=report)


@prop("gradcheck", "MT-MQLFB")
def _gc_m(seed):
    err = gradcheck_mtmqlfb(seed)
    return err <= GRAD_TOL, f"max rel err {err:.2e}"


@prop("gradcheck", "distiller")
def _gc_d(seed):
    err = gradcheck_distiller(seed)
    return err <= GRAD_TOL, f"max rel err {err:.2e}"


@prop("gradcheck", "CWIB")
def _gc_c(seed):
    err = gradcheck_cwib(seed)
    return err <= GRAD_TOL, f"max rel err {err:.2e}"


@prop("gradcheck", "backbone and decoder heads")
def _gc_h(seed):
    err = gradcheck_heads(seed)
    return err <= GRAD_TOL, f"max rel err {err:.2e}"


# -- pipeline ------------------------------------------------------------------

@prop("pipeline", "checkpoint round trip reproduces outputs bitwise")
def _ckpt(seed):
    from .pipeline import ModelConfig, synth_dataset, train
    from .pipeline.train import Checkpoint

    cfg = ModelConfig(image_size=(16, 16), d=8, heads=2, tokens=4, window=(2, 2), backbone_width=4,
                      precision="f64", seed=seed).validate()
    ds = synth_dataset(seed, 2, cfg)
    res = train(cfg, ds, 3)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "ck.mtls"
        res.checkpoint.save(path)
        net2 = Checkpoint.load(path).build_model()
    x = _t(np.stack([s.image for s in ds]))
    res.model.eval()
    net2.eval()
    a, b = res.model(x), net2(x)
    ok = all(np.array_equal(a.refined[t].data, b.refined[t].data) for t in cfg.tasks)
    return ok, "bitwise" if ok else "outputs differ"


def run(seed: int = 42, only: list[str] | None = None, out=None) -> list[Outcome]:
    """Run the selected groups; prints one PASS/FAIL line per property."""
    known = groups()
    if only:
        bad = [g for g in only if g not in known]
        if bad:
            raise ValueError(f"unknown groups {bad}; choose from {known}")
    results = []
    with precision("f64"):
        for p in REGISTRY:
            if only and p.group not in only:
                continue
            try:
                ok, detail = p.fn(seed)
            except Exception as exc:  # a crash is a failure of that property
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(Outcome(p.group, p.name, bool(ok), detail))
            if out is not None:
                print(f"{'PASS' if ok else 'FAIL'}  [{p.group}] {p.name}: {detail}", file=out, flush=True)
    return results
