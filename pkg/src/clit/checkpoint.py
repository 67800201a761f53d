"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CLITCKPT"            magic
    u32 version            currently 1
    u32 n, n bytes         UTF-8 JSON: {"model": <ModelConfig>, "meta": {...}}
    u32 count              number of tensors
    count x:
        u32 n, n bytes     parameter name (UTF-8)
        u8 dtype           0 = float32, 1 = float64
        u32 rank, rank x u32 dims
        payload            little-endian values, C order
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .cascade import CLIT
from .config import ModelConfig

MAGIC = b"CLITCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(Exception):
    pass


def dumps(model: CLIT, meta: dict[str, Any] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    header = json.dumps({"model": model.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    params = list(model.named_parameters())
    buf.write(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode()
        arr = p.data
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BI", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return buf.getvalue()


def save_checkpoint(model: CLIT, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(model, meta))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> tuple[ModelConfig, dict[str, np.ndarray], dict[str, Any]]:
    """Parse the whole archive before anything is built."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a CLIT checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (n,) = r.unpack("<I")
    try:
        header = json.loads(r.take(n).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode()
        tag, rank = r.unpack("<BI")
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size), dtype=dt).reshape(dims)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return ModelConfig.from_dict(header["model"]), tensors, header.get("meta", {})


def load_checkpoint(path: str | Path) -> tuple[CLIT, dict[str, Any]]:
    config, tensors, meta = loads(Path(path).read_bytes())
    model = CLIT(config, rng=0)
    own = dict(model.named_parameters())
    if set(own) != set(tensors):
        missing = sorted(set(own) - set(tensors))
        extra = sorted(set(tensors) - set(own))
        raise CheckpointError(f"parameter set mismatch; missing={missing}, unexpected={extra}")
    for name, p in own.items():
        if tensors[name].shape != p.shape:
            raise CheckpointError(f"{name}: stored shape {tensors[name].shape} != {p.shape}")
    for name, p in own.items():
        p.data = tensors[name]
    return model, meta


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
