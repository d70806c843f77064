"""Deliberate mutations used by ``verify --fault`` to prove the checks can fail."""
from __future__ import annotations

import contextlib

KNOWN = {
    "swap-qk": "exchange queries and keys in the linear-attention fast path",
    "no-mask": "let window attention attend to padded keys",
    "skip-norm": "drop the kernel normaliser in linear attention",
}

_active: set = set()


def active(name: str) -> bool:
    return name in _active


@contextlib.contextmanager
def inject(name: str | None):
    if name is None:
        yield
        return
    if name not in KNOWN:
        raise ValueError(f"unknown fault {name!r}; choose from {sorted(KNOWN)}")
    _active.add(name)
    try:
        yield
    finally:
        _active.discard(name)
