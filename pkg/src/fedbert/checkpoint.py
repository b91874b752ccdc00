"""Binary checkpoint format for :class:`~fedbert.model.ParamSet`.

Layout (all integers unsigned 32-bit little-endian)::

    b"FCRP1\\0"
    entry count
    per entry: name length, UTF-8 name, rank, dims..., float64 LE row-major payload
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ParamSet

MAGIC = b"FCRP1\0"
_U32 = struct.Struct("<I")
_F64 = np.dtype("<f8")


def dumps(params: ParamSet) -> bytes:
    parts = [MAGIC, _U32.pack(len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(n) for n in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> ParamSet:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated checkpoint while reading {what} at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    if bytes(take(len(MAGIC), "magic")) != MAGIC:
        raise FormatError("bad magic number: not an FCRP1 checkpoint")
    count = u32("entry count")
    entries = []
    for i in range(count):
        name = bytes(take(u32(f"entry {i} name length"), f"entry {i} name")).decode("utf-8")
        rank = u32(f"{name} rank")
        dims = tuple(u32(f"{name} dims") for _ in range(rank))
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = take(n * 8, f"{name} payload ({n} values for shape {dims})")
        entries.append((name, np.frombuffer(payload, dtype=_F64).reshape(dims)))
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after {count} entries")
    return ParamSet(entries)


def save_checkpoint(params: ParamSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> ParamSet:
    return loads(Path(path).read_bytes())
