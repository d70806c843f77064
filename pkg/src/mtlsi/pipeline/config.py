"""Model/training configuration and its flat ``key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class TaskSpec:
    name: str
    channels: int
    loss: str  # "ce" or "l1"


TASKS = {
    "segmentation": TaskSpec("segmentation", 4, "ce"),
    "depth": TaskSpec("depth", 1, "l1"),
    "boundary": TaskSpec("boundary", 2, "ce"),
    "normal": TaskSpec("normal", 3, "l1"),
}


@dataclass
class ModelConfig:
    tasks: tuple = ("segmentation", "depth", "boundary")
    loss_weights: tuple = ()
    image_size: tuple = (32, 32)
    d: int = 32
    scales: tuple = (1, 3, 5)
    tokens: int = 16
    window: tuple = (4, 4)
    heads: int = 4
    backbone_width: int = 16
    seed: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 4
    precision: str = "f32"

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.loss_weights = tuple(float(w) for w in self.loss_weights) or (1.0,) * len(self.tasks)
        self.image_size = tuple(int(x) for x in self.image_size)
        self.scales = tuple(int(s) for s in self.scales)
        self.window = tuple(int(x) for x in self.window)

    @property
    def T(self) -> int:
        return len(self.tasks)

    @property
    def H(self) -> int:
        return self.image_size[0] // 4

    @property
    def W(self) -> int:
        return self.image_size[1] // 4

    @property
    def task_specs(self) -> list[TaskSpec]:
        return [TASKS[t] for t in self.tasks]

    def validate(self) -> "ModelConfig":
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ValueError(f"unknown tasks {unknown}; known: {sorted(TASKS)}")
        if len(set(self.tasks)) != len(self.tasks) or not self.tasks:
            raise ValueError("tasks must be a non-empty list without repeats")
        if len(self.loss_weights) != self.T or any(w <= 0 for w in self.loss_weights):
            raise ValueError("need one positive loss weight per task")
        h0, w0 = self.image_size
        if h0 % 8 or w0 % 8:
            raise ValueError(f"image extents must be multiples of 8 (even feature maps), got {self.image_size}")
        if not self.scales or any(s not in (1, 3, 5) for s in self.scales) or len(set(self.scales)) != len(self.scales):
            raise ValueError(f"scales must be a non-empty subset of (1, 3, 5), got {self.scales}")
        n_fused = self.T * self.H * self.W // 4
        if not 1 <= self.tokens < n_fused:
            raise ValueError(f"tokens must satisfy 1 <= K < T*H*W/4 = {n_fused}, got {self.tokens}")
        if self.d % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        if len(self.window) != 2 or min(self.window) < 1:
            raise ValueError(f"window must be two positive extents, got {self.window}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        if self.batch_size < 1 or self.backbone_width < 1:
            raise ValueError("batch_size and backbone_width must be positive")
        return self

    def replace(self, **changes) -> "ModelConfig":
        if "tasks" in changes and "loss_weights" not in changes:
            changes["loss_weights"] = ()
        return dataclasses.replace(self, **changes)

    # -- text form -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f for f in dataclasses.fields(cls)}
        defaults = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(value, getattr(defaults, key), key)
        return cls(**values).validate()

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(value: str, default, key: str):
    if isinstance(default, tuple):
        items = [s.strip() for s in value.split(",") if s.strip()]
        if key == "tasks":
            return tuple(items)
        caster = float if key == "loss_weights" else int
        return tuple(caster(s) for s in items)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value
