"""Coarse-to-fine multi-task network at toy scale.

image ─ backbone (strides 4, 8) ─ per-task preliminary decoder ─ P_t, coarse_t
      ─ fuse_inputs(P_t, coarse_t) → F_t ─ MT-MQLFB over all F_t → I
      ─ per task: distiller(I) → I'_t ─ CWIB(P_t, I'_t) ─ output decoder → refined_t

Predictions are produced at the stride-4 feature extent and bilinearly
resized to the image extent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cwib import CWIB, cwib_forward
from ..distiller import Distiller
from ..mtmqlfb import MTMQLFB, TaskFeature, mtmqlfb_forward
from ..numerics import ops
from ..numerics.nn import Conv2d, ConvBNReLU, Module, _rng
from ..numerics.tensor import Tensor, resolve_dtype
from .config import ModelConfig


class Backbone(Module):
    """Three stride-2 conv blocks; returns the stride-4 and stride-8 levels."""

    def __init__(self, width: int, rng=None, dtype=None):
        rng = _rng(rng)
        self.stem = ConvBNReLU(3, width, 3, rng, stride=2, dtype=dtype)
        self.stage1 = ConvBNReLU(width, width, 3, rng, stride=2, dtype=dtype)
        self.stage2 = ConvBNReLU(width, 2 * width, 3, rng, stride=2, dtype=dtype)

    def forward(self, image: Tensor) -> list[Tensor]:
        if min(image.shape[-2:]) < 8:
            raise ValueError(f"image extent {image.shape[-2:]} too small for a stride-8 backbone")
        c4 = self.stage1(self.stem(image))
        return [c4, self.stage2(c4)]


class PreliminaryDecoder(Module):
    """Upsample stride-8 level, concat with stride-4 level, conv → P_t; 1×1 head → coarse."""

    def __init__(self, width: int, d: int, channels: int, rng=None, dtype=None):
        rng = _rng(rng)
        self.block = ConvBNReLU(3 * width, d, 3, rng, dtype=dtype)
        self.head = Conv2d(d, channels, 1, rng, dtype=dtype)

    def forward(self, pyramid: list[Tensor]) -> tuple[Tensor, Tensor]:
        c4, c8 = pyramid
        x = ops.concat([c4, ops.resize_bilinear(c8, c4.shape[-2:])], axis=-3)
        p = self.block(x)
        return p, self.head(p)


class OutputDecoder(Module):
    """Two 3×3 conv + ReLU, then a 1×1 prediction conv."""

    def __init__(self, d: int, channels: int, rng=None, dtype=None):
        rng = _rng(rng)
        self.conv1 = Conv2d(d, d, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(d, d, 3, rng, dtype=dtype)
        self.head = Conv2d(d, channels, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(ops.relu(self.conv2(ops.relu(self.conv1(x)))))


@dataclass
class Predictions:
    coarse: dict   # task → B×C×H0×W0
    refined: dict  # task → B×C×H0×W0


class MTLSINet(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        dtype = resolve_dtype(config.precision)
        rng = np.random.default_rng(config.seed)
        c, d = config.backbone_width, config.d
        self.backbone = Backbone(c, rng, dtype)
        self.prelim = [PreliminaryDecoder(c, d, t.channels, rng, dtype) for t in config.task_specs]
        self.fuse_in = [Conv2d(d + t.channels, d, 1, rng, dtype=dtype) for t in config.task_specs]
        self.fusion = MTMQLFB(config.T, d, config.scales, config.heads, rng, dtype)
        self.distillers = [Distiller(d, config.tokens, rng, dtype=dtype) for _ in config.tasks]
        self.cwibs = [CWIB(d, config.tokens, config.window, config.heads, rng, dtype)
                      for _ in config.tasks]
        self.decoders = [OutputDecoder(d, t.channels, rng, dtype) for t in config.task_specs]

    @property
    def dtype(self):
        return resolve_dtype(self.config.precision)

    def forward(self, image) -> Predictions:
        return full_forward(image, self)


def backbone_forward(image: Tensor, net: MTLSINet) -> list[Tensor]:
    return net.backbone(image)


def preliminary_decode(pyramid: list[Tensor], task: int, net: MTLSINet) -> tuple[Tensor, Tensor]:
    return net.prelim[task](pyramid)


def fuse_inputs(p: Tensor, coarse: Tensor, proj: Conv2d, task: str = "") -> TaskFeature:
    """Channel concat of P_t and its coarse prediction, 1×1 conv to d, channels-last."""
    if p.shape[-2:] != coarse.shape[-2:]:
        raise ValueError(f"spatial mismatch: {p.shape} vs {coarse.shape}")
    f = proj(ops.concat([p, coarse], axis=-3))
    axes = tuple(range(f.ndim - 3)) + (f.ndim - 2, f.ndim - 1, f.ndim - 3)
    return TaskFeature(task, ops.transpose(f, axes))


def _channels_last(x: Tensor) -> Tensor:
    return ops.transpose(x, (0, 2, 3, 1))


def _channels_first(x: Tensor) -> Tensor:
    return ops.transpose(x, (0, 3, 1, 2))


def full_forward(image, net: MTLSINet) -> Predictions:
    """``image``: 3×H0×W0 or B×3×H0×W0. Outputs are always batched."""
    cfg = net.config
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image), dtype=net.dtype)
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
    size = x.shape[-2:]
    pyramid = backbone_forward(x, net)
    ps, coarse, feats = [], {}, []
    for t, spec in enumerate(cfg.task_specs):
        p, c = preliminary_decode(pyramid, t, net)
        ps.append(p)
        coarse[spec.name] = c
        feats.append(fuse_inputs(p, c, net.fuse_in[t], spec.name))
    fused = mtmqlfb_forward(feats, net.fusion).tensor
    refined = {}
    for t, spec in enumerate(cfg.task_specs):
        tokens = net.distillers[t](fused)
        xt = cwib_forward(_channels_last(ps[t]), tokens, net.cwibs[t])
        refined[spec.name] = net.decoders[t](_channels_first(xt))
    return Predictions(
        {k: ops.resize_bilinear(v, size) for k, v in coarse.items()},
        {k: ops.resize_bilinear(v, size) for k, v in refined.items()},
    )
