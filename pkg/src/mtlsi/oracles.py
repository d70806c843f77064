"""Direct-loop numpy references used to check the fast paths.

Nothing here touches the autograd ops: every function reads raw parameter
arrays and recomputes from definitions (explicit loops, materialised
attention matrices). Always evaluated in float64.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

EPS = 1e-5


def _f64(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def matmul_loops(a, b) -> np.ndarray:
    a, b = _f64(a), _f64(b)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    c = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            c[i, j] = acc
    return c


def depthwise_conv_loops(x, kernels, stride: int, pad: int) -> np.ndarray:
    x, kernels = _f64(x), _f64(kernels)
    C, H, W = x.shape
    s = kernels.shape[-1]
    Ho = (H + 2 * pad - s) // stride + 1
    Wo = (W + 2 * pad - s) // stride + 1
    out = np.zeros((C, Ho, Wo))
    for c in range(C):
        for oy in range(Ho):
            for ox in range(Wo):
                acc = 0.0
                for i in range(s):
                    for j in range(s):
                        y, xx = oy * stride + i - pad, ox * stride + j - pad
                        if 0 <= y < H and 0 <= xx < W:
                            acc += x[c, y, xx] * kernels[c, i, j]
                out[c, oy, ox] = acc
    return out


def conv_loops(x, weight, bias, stride: int, pad: int) -> np.ndarray:
    x, weight = _f64(x), _f64(weight)
    C, H, W = x.shape
    O, _, k, _ = weight.shape
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    xp[:, pad:pad + H, pad:pad + W] = x
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for oy in range(Ho):
            for ox in range(Wo):
                patch = xp[:, oy * stride:oy * stride + k, ox * stride:ox * stride + k]
                out[o, oy, ox] = float(np.sum(patch * weight[o]))
    if bias is not None:
        out += _f64(bias)[:, None, None]
    return out


def avg_pool_loops(x, k: int, stride: int) -> np.ndarray:
    x = _f64(x)
    C, H, W = x.shape
    Ho, Wo = (H - k) // stride + 1, (W - k) // stride + 1
    out = np.zeros((C, Ho, Wo))
    for c in range(C):
        for oy in range(Ho):
            for ox in range(Wo):
                acc = 0.0
                for i in range(k):
                    for j in range(k):
                        acc += x[c, oy * stride + i, ox * stride + j]
                out[c, oy, ox] = acc / (k * k)
    return out


def softmax_direct(x, axis: int = -1) -> np.ndarray:
    e = np.exp(_f64(x))
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm_ref(x, gamma, beta, eps: float = EPS) -> np.ndarray:
    x = _f64(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * _f64(gamma) + _f64(beta)


def batch_norm_ref(x, bn, channel_axis: int) -> np.ndarray:
    """Uses batch statistics when ``bn.training`` else running statistics."""
    x = _f64(x)
    ax = channel_axis % x.ndim
    red = tuple(i for i in range(x.ndim) if i != ax)
    shape = [1] * x.ndim
    shape[ax] = x.shape[ax]
    if bn.training:
        mu = x.mean(axis=red, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=red, keepdims=True)
    else:
        mu = _f64(bn.running_mean).reshape(shape)
        var = _f64(bn.running_var).reshape(shape)
    return (x - mu) / np.sqrt(var + EPS) * _f64(bn.gamma).reshape(shape) + _f64(bn.beta).reshape(shape)


def gelu_ref(x) -> np.ndarray:
    x = _f64(x)
    return x * 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))


def linear_ref(x, layer) -> np.ndarray:
    y = _f64(x) @ _f64(layer.weight)
    return y if layer.bias is None else y + _f64(layer.bias)


def mlp_ref(x, mlp) -> np.ndarray:
    return linear_ref(gelu_ref(linear_ref(x, mlp.fc1)), mlp.fc2)


def phi_ref(x) -> np.ndarray:
    x = _f64(x)
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def kernel_attention_ref(q, k, v) -> np.ndarray:
    """Explicit N_q×N weights phi(q_i)·phi(k_j), normalised per row, by loops over queries."""
    fq, fk, v = phi_ref(q), phi_ref(k), _f64(v)
    out = np.zeros((fq.shape[0], v.shape[1]))
    for i in range(fq.shape[0]):
        w = np.array([fq[i] @ fk[j] for j in range(fk.shape[0])])
        out[i] = (w / w.sum()) @ v
    return out


def softmax_attention_ref(q, k, v, heads: int, key_valid=None) -> np.ndarray:
    """Per-head, per-query loop over scaled dot-product attention."""
    q, k, v = _f64(q), _f64(k), _f64(v)
    nq, d = q.shape
    dh = d // heads
    out = np.zeros((nq, v.shape[1]))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(nq):
            logits = k[:, sl] @ q[i, sl] / math.sqrt(dh)
            if key_valid is not None:
                logits = np.where(key_valid, logits, -np.inf)
            w = np.exp(logits - logits.max())
            out[i, sl] = (w / w.sum()) @ v[:, sl]
    return out


def mtmqlfb_ref(features, block) -> np.ndarray:
    """Full block for unbatched ``H×W×d`` task maps with quadratic attention per head."""
    feats = [_f64(getattr(f, "tensor", f)) for f in features]
    T = len(feats)
    H, W, d = feats[0].shape
    heads = block.heads
    dh = d // heads
    pooled = [avg_pool_loops(f.transpose(2, 0, 1), 2, 2).transpose(1, 2, 0).reshape(-1, d) for f in feats]
    m = layer_norm_ref(np.concatenate(pooled), block.kv_norm.gamma, block.kv_norm.beta)
    k, v = linear_ref(m, block.key), linear_ref(m, block.value)
    outs = []
    for br in block.branches:
        toks = []
        for t in range(T):
            x = depthwise_conv_loops(feats[t].transpose(2, 0, 1), br.kernels[t], 2, (br.s - 1) // 2)
            x = np.maximum(batch_norm_ref(x, br.bns[t], 0), 0.0)
            toks.append(x.transpose(1, 2, 0).reshape(-1, d))
        g = np.concatenate(toks)
        q = linear_ref(layer_norm_ref(g, br.norm.gamma, br.norm.beta), br.query)
        o = np.zeros_like(q)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            o[:, sl] = kernel_attention_ref(q[:, sl], k[:, sl], v[:, sl])
        outs.append(o)
    agg = np.concatenate(outs, axis=1) @ _f64(block.out_proj.weight)
    return agg + mlp_ref(agg, block.mlp)


def window_attention_ref(q, k, v, heads: int, window: tuple) -> np.ndarray:
    """Loop over pixels; each attends to the valid pixels of its own window."""
    q, k, v = _f64(q), _f64(k), _f64(v)
    H, W, d = q.shape
    hw, ww = window
    out = np.zeros_like(q)
    for y in range(H):
        for x in range(W):
            wy, wx = (y // hw) * hw, (x // ww) * ww
            ks = k[wy:wy + hw, wx:wx + ww].reshape(-1, d)
            vs = v[wy:wy + hw, wx:wx + ww].reshape(-1, d)
            out[y, x] = softmax_attention_ref(q[y, x][None], ks, vs, heads)[0]
    return out


def cwib_ref(p, tokens, block) -> np.ndarray:
    p, tokens = _f64(p), _f64(tokens)
    H, W, d = p.shape
    ln = layer_norm_ref(p, block.norm.gamma, block.norm.beta)
    q = linear_ref(ln, block.query)
    o_w = window_attention_ref(q, linear_ref(ln, block.key_w), linear_ref(ln, block.value_w),
                               block.heads, block.window)
    src = layer_norm_ref(tokens + _f64(block.pos), block.norm_c.gamma, block.norm_c.beta)
    o_c = softmax_attention_ref(q.reshape(-1, d), linear_ref(src, block.key_c),
                                linear_ref(src, block.value_c), block.heads).reshape(H, W, d)
    z = linear_ref(np.concatenate([o_w, o_c], axis=-1), block.fuse) + p
    return z + mlp_ref(layer_norm_ref(z, block.ffn_norm.gamma, block.ffn_norm.beta), block.ffn)


def distiller_ref(i, w) -> tuple[np.ndarray, np.ndarray]:
    """(assignment K×N, semantic tokens K×d) for an unbatched N×d sequence."""
    i = _f64(i)
    h = np.maximum(batch_norm_ref(i @ _f64(w.conv1.weight), w.bn, -1), 0.0)
    logits = (h @ _f64(w.conv2.weight)).T
    logits = logits - logits.max(axis=1, keepdims=True)
    a = softmax_direct(logits, axis=1)
    return a, a @ linear_ref(i, w.proj)
