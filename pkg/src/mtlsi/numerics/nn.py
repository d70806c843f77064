"""Parameter containers and the handful of layers the network is built from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Param, Tensor, default_dtype


class Module:
    """Attribute-walking container: Params, sub-Modules and lists/dicts of them.

    Non-learnable state (BN running statistics) is declared by listing
    attribute names in ``_buffers``.
    """

    _buffers: tuple = ()
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name, "named_parameters")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name, "named_buffers")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            for child in _children(value):
                yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param.{n}": p.data.copy() for n, p in self.named_parameters()}
        state.update({f"buffer.{n}": b.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = own.keys() - state.keys()
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for n, p in self.named_parameters():
            src = state[f"param.{n}"]
            if src.shape != p.shape:
                raise ValueError(f"shape mismatch for {n}: {src.shape} vs {p.shape}")
            p.data[...] = src
        for n, b in self.named_buffers():
            b[...] = state[f"buffer.{n}"]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _children(value):
    if isinstance(value, Module):
        return [value]
    if isinstance(value, (list, tuple)):
        return [v for v in value if isinstance(v, Module)]
    if isinstance(value, dict):
        return [v for v in value.values() if isinstance(v, Module)]
    return []


def _walk(value, name: str, method: str):
    if isinstance(value, Param) and method == "named_parameters":
        yield name, value
    elif isinstance(value, Module):
        yield from getattr(value, method)(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}", method)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}", method)


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


class Linear(Module):
    """``y = x @ W + b`` over the last axis; W is stored ``in×out``."""

    def __init__(self, d_in: int, d_out: int, rng=None, bias: bool = True, dtype=None):
        rng = _rng(rng)
        dtype = dtype or default_dtype()
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Param(rng.uniform(-bound, bound, (d_in, d_out)), dtype=dtype)
        self.bias = Param(rng.uniform(-bound, bound, d_out), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, dtype=None):
        dtype = dtype or default_dtype()
        self.gamma = Param(np.ones(d), dtype=dtype)
        self.beta = Param(np.zeros(d), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class BatchNorm(Module):
    """Batch normalisation over ``channel_axis`` (−3 for maps, −2 for C×N sequences)."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, c: int, channel_axis: int = -3, dtype=None):
        dtype = dtype or default_dtype()
        self.gamma = Param(np.ones(c), dtype=dtype)
        self.beta = Param(np.zeros(c), dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.channel_axis = channel_axis

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, channel_axis=self.channel_axis)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng=None, stride: int = 1,
                 bias: bool = True, dtype=None):
        rng = _rng(rng)
        dtype = dtype or default_dtype()
        fan_in = c_in * k * k
        self.weight = Param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k)), dtype=dtype)
        self.bias = Param(np.zeros(c_out), dtype=dtype) if bias else None
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class ConvBNReLU(Module):
    """Conv (no bias: BN absorbs it) → BatchNorm → ReLU."""

    def __init__(self, c_in: int, c_out: int, k: int, rng=None, stride: int = 1, dtype=None):
        self.conv = Conv2d(c_in, c_out, k, rng, stride=stride, bias=False, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class MLP(Module):
    """Linear → GELU → Linear."""

    def __init__(self, d: int, hidden: int, rng=None, d_out: int | None = None, dtype=None):
        rng = _rng(rng)
        self.fc1 = Linear(d, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, d if d_out is None else d_out, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))
