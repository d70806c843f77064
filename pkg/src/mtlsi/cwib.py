"""Cross-window integrated attention block.

Two branches share one query projection of the task map P: window self-
attention over non-overlapping windows, and cross-attention from every pixel
to the task's semantic tokens (plus a learned positional embedding). Branch
outputs are concatenated, projected, added to P, then refined by a pre-norm
FFN residual. Maps are channels-last ``H×W×d`` or ``B×H×W×d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import faults
from .linear_attention import merge_heads, split_heads
from .numerics import ops
from .numerics.nn import MLP, LayerNorm, Linear, Module, _rng
from .numerics.tensor import Param, Tensor, default_dtype

MASK_VALUE = -1e9


@dataclass(frozen=True)
class WindowGrid:
    height: int
    width: int
    window: tuple
    padded_h: int = field(init=False)
    padded_w: int = field(init=False)

    def __post_init__(self):
        hw, ww = self.window
        if hw < 1 or ww < 1:
            raise ValueError(f"window extents must be positive, got {self.window}")
        object.__setattr__(self, "padded_h", -(-self.height // hw) * hw)
        object.__setattr__(self, "padded_w", -(-self.width // ww) * ww)

    @property
    def rows(self) -> int:
        return self.padded_h // self.window[0]

    @property
    def cols(self) -> int:
        return self.padded_w // self.window[1]

    @property
    def n_windows(self) -> int:
        return self.rows * self.cols

    @property
    def window_area(self) -> int:
        return self.window[0] * self.window[1]

    @property
    def mask(self) -> np.ndarray:
        """``padded_h×padded_w``; True on original content, False on padding."""
        m = np.zeros((self.padded_h, self.padded_w), dtype=bool)
        m[:self.height, :self.width] = True
        return m

    def key_mask(self) -> np.ndarray:
        """Per-window validity, ``n_windows×window_area``."""
        return self._split(self.mask[..., None])[..., 0]

    def _split(self, x: np.ndarray) -> np.ndarray:
        hw, ww = self.window
        d = x.shape[-1]
        x = x.reshape(self.rows, hw, self.cols, ww, d).transpose(0, 2, 1, 3, 4)
        return x.reshape(self.n_windows, self.window_area, d)


def partition(p: Tensor, grid: WindowGrid) -> Tensor:
    """(B×)H×W×d → (B×)nW×(H_w·W_w)×d, zero-padding bottom/right, windows row-major."""
    H, W, d = p.shape[-3:]
    if (H, W) != (grid.height, grid.width):
        raise ValueError(f"grid built for {(grid.height, grid.width)}, map is {(H, W)}")
    lead = p.shape[:-3]
    x = p
    if (grid.padded_h, grid.padded_w) != (H, W):
        widths = [(0, 0)] * len(lead) + [(0, grid.padded_h - H), (0, grid.padded_w - W), (0, 0)]
        x = ops.pad(x, widths)
    hw, ww = grid.window
    nl = len(lead)
    x = ops.reshape(x, lead + (grid.rows, hw, grid.cols, ww, d))
    axes = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    x = ops.transpose(x, axes)
    return ops.reshape(x, lead + (grid.n_windows, grid.window_area, d))


def merge(windows: Tensor, grid: WindowGrid) -> Tensor:
    """Inverse of :func:`partition`, cropped back to the original extent."""
    lead = windows.shape[:-3]
    d = windows.shape[-1]
    hw, ww = grid.window
    nl = len(lead)
    x = ops.reshape(windows, lead + (grid.rows, grid.cols, hw, ww, d))
    x = ops.transpose(x, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    x = ops.reshape(x, lead + (grid.padded_h, grid.padded_w, d))
    if (grid.padded_h, grid.padded_w) != (grid.height, grid.width):
        x = x[(Ellipsis, slice(0, grid.height), slice(0, grid.width), slice(None))]
    return x


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                      key_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention over the last two axes.

    ``key_mask`` (broadcastable to ``…×N_k``) is True for keys that may be attended.
    """
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    logits = ops.matmul(qh, ops.swap_last(kh)) * (1.0 / math.sqrt(qh.shape[-1]))
    if key_mask is not None:
        bias = np.where(key_mask, 0.0, MASK_VALUE).astype(q.dtype)
        # key_mask is (..., N_k); insert head and query axes
        bias = bias[..., None, None, :]
        logits = logits + Tensor(bias)
    return merge_heads(ops.matmul(ops.softmax(logits, axis=-1), vh))


class CWIB(Module):
    def __init__(self, d: int, n_tokens: int, window: tuple = (4, 4), heads: int = 4,
                 rng=None, dtype=None):
        if d % heads:
            raise ValueError(f"{heads} heads do not divide width {d}")
        rng = _rng(rng)
        dtype = dtype or default_dtype()
        self.d, self.heads, self.window = d, heads, tuple(window)
        self.norm = LayerNorm(d, dtype=dtype)
        self.query = Linear(d, d, rng, bias=False, dtype=dtype)
        self.key_w = Linear(d, d, rng, bias=False, dtype=dtype)
        self.value_w = Linear(d, d, rng, bias=False, dtype=dtype)
        self.pos = Param(rng.normal(0.0, 0.02, (n_tokens, d)), dtype=dtype)
        self.norm_c = LayerNorm(d, dtype=dtype)
        self.key_c = Linear(d, d, rng, bias=False, dtype=dtype)
        self.value_c = Linear(d, d, rng, bias=False, dtype=dtype)
        self.fuse = Linear(2 * d, d, rng, dtype=dtype)
        self.ffn_norm = LayerNorm(d, dtype=dtype)
        self.ffn = MLP(d, 4 * d, rng, dtype=dtype)

    def grid(self, H: int, W: int) -> WindowGrid:
        return WindowGrid(H, W, self.window)

    def forward(self, p: Tensor, tokens: Tensor) -> Tensor:
        return cwib_forward(p, tokens, self)


def _queries(p: Tensor, w: CWIB) -> tuple[Tensor, Tensor]:
    ln = w.norm(p)
    return ln, w.query(ln)


def _wmsa_from(ln: Tensor, q: Tensor, w: CWIB, grid: WindowGrid) -> Tensor:
    qw = partition(q, grid)
    kw = partition(w.key_w(ln), grid)
    vw = partition(w.value_w(ln), grid)
    mask = None
    if (grid.padded_h, grid.padded_w) != (grid.height, grid.width) and not faults.active("no-mask"):
        mask = grid.key_mask()
    return merge(softmax_attention(qw, kw, vw, w.heads, mask), grid)


def _cross_from(q: Tensor, tokens: Tensor, e: Tensor, w: CWIB) -> Tensor:
    if tokens.shape[-2] < 1:
        raise ValueError("cross-attention needs at least one semantic token")
    src = w.norm_c(tokens + e)
    kc, vc = w.key_c(src), w.value_c(src)
    *lead, H, W, d = q.shape
    qf = ops.reshape(q, tuple(lead) + (H * W, d))
    out = softmax_attention(qf, kc, vc, w.heads)
    return ops.reshape(out, out.shape[:-2] + (H, W, d))


def wmsa(p: Tensor, w: CWIB, grid: WindowGrid | None = None) -> Tensor:
    grid = grid or w.grid(*p.shape[-3:-1])
    ln, q = _queries(p, w)
    return _wmsa_from(ln, q, w, grid)


def cross_attend(q_src: Tensor, tokens: Tensor, e: Tensor, w: CWIB) -> Tensor:
    _, q = _queries(q_src, w)
    return _cross_from(q, tokens, e, w)


def cwib_forward(p: Tensor, tokens: Tensor, w: CWIB) -> Tensor:
    grid = w.grid(*p.shape[-3:-1])
    ln, q = _queries(p, w)
    o_w = _wmsa_from(ln, q, w, grid)
    o_c = _cross_from(q, tokens, w.pos, w)
    z = w.fuse(ops.concat([o_w, o_c], axis=-1)) + p
    return z + w.ffn(w.ffn_norm(z))
