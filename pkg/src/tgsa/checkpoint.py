"""Flat binary parameter checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"TGSA"
    version u32      currently 1
    meta    u32 length + UTF-8 "key=value" lines (may be empty)
    records, until EOF:
        u32 name length, UTF-8 name
        u32 rank
        rank * u64 dims
        row-major f64 payload

Round-trips are bit-exact: payloads are written as raw little-endian f64.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

MAGIC = b"TGSA"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, Tensor],
                    meta: Optional[Mapping[str, str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_text = "" if not meta else "".join(f"{k}={v}\n" for k, v in meta.items())
    meta_bytes = meta_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        for name, t in tensors.items():
            name_bytes = name.encode("utf-8")
            arr = np.asarray(t.data, dtype="<f8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict[str, str]]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not a TGSA checkpoint (bad magic {raw[:4]!r})")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, 8)
    pos = 12
    meta_text = raw[pos:pos + meta_len].decode("utf-8")
    pos += meta_len
    meta: dict[str, str] = {}
    for line in meta_text.splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key] = value

    tensors: dict[str, Tensor] = {}
    while pos < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, pos) if rank else ()
        pos += 8 * rank
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        tensors[name] = Tensor(data.copy())
    return tensors, meta
