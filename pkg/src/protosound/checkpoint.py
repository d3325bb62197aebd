"""Binary checkpoint container.

Layout (little-endian)::

    b"PSND1"
    u32 metadata length, UTF-8 JSON metadata
    u32 array count
    per array: u16 name length, name, u8 ndim, u32 dims..., f32 payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"PSND1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)


def dumps(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(ckpt.arrays))]
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name], dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"array {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} "
                                  f"(need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic/version {magic!r}, expected {MAGIC!r}")
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from None
    (count,) = r.unpack("<I", "array count")
    arrays = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"name length of array {i}")
        name = r.take(name_len, f"name of array {i}").decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B", f"ndim of {name}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name}")
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if n * 4 > len(buf) - r.pos:
            raise CheckpointError(f"truncated checkpoint: array {name} declares {dims} ({n * 4} bytes) but only "
                                  f"{len(buf) - r.pos} bytes remain")
        arrays[name] = np.frombuffer(r.take(n * 4, f"payload of {name}"), dtype="<f4").reshape(dims).copy()
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last array")
    return Checkpoint(meta, arrays)


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
