"""Flat binary checkpoint format for named float32 arrays.

Layout, all integers little-endian u32:

    magic "SSKP" | version | record...

    record := name_len | name (UTF-8) | rank | dim * rank | payload

Payload is raw float32, row-major, prod(dims) values; rank 0 means a single
scalar. Config values ride along as scalar records named ``config.<key>``.
Records are written sorted by name so equal state produces equal bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataFormatError
from .tensor import Tensor

MAGIC = b"SSKP"
VERSION = 1

_CONFIG_PREFIX = "config."


def _as_array(value) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    arr = np.asarray(arr, dtype="<f4")
    # ascontiguousarray would promote rank 0 to rank 1, losing the shape
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def save_checkpoint(path: str | Path,
                    arrays: Mapping[str, np.ndarray | Tensor],
                    config: Mapping[str, float] | None = None) -> None:
    """Write named arrays plus scalar config entries to ``path``."""
    records: dict[str, np.ndarray] = {}
    for name, value in arrays.items():
        if name.startswith(_CONFIG_PREFIX):
            raise ValueError(f"array name {name!r} collides with config namespace")
        records[name] = _as_array(value)
    for key, value in (config or {}).items():
        records[_CONFIG_PREFIX + key] = np.asarray(float(value), dtype="<f4")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name in sorted(records):
            arr = records[name]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def _read_exact(f, n: int, path, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(
            f"{path}: truncated {what} at byte {f.tell() - len(buf)}")
    return buf


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Read a checkpoint back into (arrays, config) dicts."""
    arrays: dict[str, np.ndarray] = {}
    config: dict[str, float] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise DataFormatError(
                    f"{path}: truncated record header at byte {f.tell() - len(head)}")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, path, "record name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, path, f"rank of {name!r}"))
            dims = struct.unpack(
                f"<{rank}I", _read_exact(f, 4 * rank, path, f"dims of {name!r}")) if rank else ()
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 4 * count, path, f"payload of {name!r}")
            arr = np.frombuffer(payload, dtype="<f4", count=count).reshape(dims)
            if name.startswith(_CONFIG_PREFIX):
                config[name[len(_CONFIG_PREFIX):]] = float(arr)
            else:
                arrays[name] = arr.copy()
    return arrays, config
