"""Versioned binary tensor container shared by checkpoints and dataset caches.

Layout (all integers little-endian)::

    b"MTLS" | u32 version | u32 text length | UTF-8 config text | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u8 dtype tag | u32 rank
                | rank × u64 extents | raw little-endian values
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MTLS"
VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {np.dtype(v).str: k for k, v in _TAGS.items()}


class ContainerError(ValueError):
    pass


def _tag(arr: np.ndarray) -> tuple[int, np.ndarray]:
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8" if arr.dtype.itemsize == 8 else "<f4", copy=False)
    elif arr.dtype.kind == "b":
        arr = arr.astype("u1")
    elif arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        arr = arr.astype("<i8")
    return _CODES[arr.dtype.str], arr


def dumps(text: str, tensors: dict[str, np.ndarray]) -> bytes:
    body = text.encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(body)), body, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        code, arr = _tag(np.asarray(arr))
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)) + nb + struct.pack("<BI", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> tuple[str, dict[str, np.ndarray]]:
    try:
        return _loads(buf)
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise ContainerError(f"corrupt container: {exc}") from None
    except ValueError as exc:  # numpy reading past the end
        if isinstance(exc, ContainerError):
            raise
        raise ContainerError(f"corrupt container: {exc}") from None


def _loads(buf: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if buf[:4] != MAGIC:
        raise ContainerError("not an MTLS container (bad magic)")
    version, tlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 12
    text = buf[pos:pos + tlen].decode("utf-8")
    pos += tlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, rank = struct.unpack_from("<BI", buf, pos)
        pos += 5
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        dt = _TAGS[code]
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(shape).copy()
        pos += n * dt.itemsize
    if pos != len(buf):
        raise ContainerError("trailing bytes after last tensor")
    return text, tensors


def save(path, text: str, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(text, tensors))


def load(path) -> tuple[str, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
