"""Checkpoint container (GGCK): model config JSON + named f32 tensors.

Layout (little-endian):
    magic "GGCK" | u32 version | u32 config_len | config JSON
    | u32 tensor_count
    | per tensor: u32 name_len | name UTF-8 | u32 rank | rank * u32 extents
                  | f32 payload (row-major)

Tensors are written sorted by name, so identical states produce identical
bytes (the determinism acceptance check compares files directly).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import ModelConfig

MAGIC = b"GGCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, config: ModelConfig, tensors: dict, meta: dict | None = None) -> None:
    blob = json.dumps({"model": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
            encoded = name.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint at byte {f.tell() - len(buf)} reading {what}")
    return buf


def load_checkpoint(path):
    """-> (ModelConfig, {name: ndarray}, meta dict)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        version, clen = struct.unpack("<II", _read_exact(f, 8, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        payload = json.loads(_read_exact(f, clen, "config JSON"))
        config = ModelConfig.from_dict(payload["model"])
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, nlen, "name").decode()
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "extents"))
            n_items = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * n_items, f"tensor '{name}'"),
                                 dtype="<f4").reshape(shape).copy()
            tensors[name] = data
        return config, tensors, payload.get("meta", {})
