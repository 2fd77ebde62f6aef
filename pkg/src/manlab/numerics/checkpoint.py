"""MANCKPT1: a little-endian named-tensor container.

Layout: magic ``MANCKPT1``, u32 tensor count, then per tensor a u16 name
length, the UTF-8 name, a u8 rank, ``rank`` u32 dims and the float32 data in
row-major order.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MANCKPT1"


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"{name}: rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{source}: truncated while reading {what} at offset {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC), "magic")) != MAGIC:
        raise CheckpointError(f"{source}: not a MANCKPT1 checkpoint (bad magic)")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(nlen, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name}"))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name}"), dtype="<f4")
        out[name] = data.astype(np.float32).reshape(dims)
    if pos != len(view):
        raise CheckpointError(f"{source}: {len(view) - pos} trailing bytes after last tensor")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    """Write atomically: a crash never leaves a half-written checkpoint behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(dumps(tensors))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    path = Path(path)
    return loads(path.read_bytes(), str(path))
