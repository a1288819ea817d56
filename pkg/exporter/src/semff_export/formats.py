"""The engine's ingestion formats, implemented from their byte layout.

Feature container: 4-byte magic ``VDFF``, then version, feature dimension
and row count as little-endian u32, then the rows as float32, row-major.
Word vectors: one token per line followed by its values, space separated.

This module deliberately shares no code with the engine; compatibility is
proven by checked-in byte fixtures on the engine's side.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError

MAGIC = b"VDFF"
VERSION = 1


def write_feature_file(path: str | Path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise InputError(f"features must be 2-d, got shape {arr.shape}")
    if arr.shape[1] == 0:
        raise InputError("features need at least one column")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    """Inverse of write_feature_file, used for round-trip checks."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16 or header[:4] != MAGIC:
            raise InputError(f"{path}: not a feature file")
        version, dim, count = struct.unpack("<III", header[4:16])
        if version != VERSION:
            raise InputError(f"{path}: unsupported version {version}")
        payload = f.read()
    if len(payload) != 4 * dim * count:
        raise InputError(f"{path}: expected {4 * dim * count} payload bytes, "
                         f"got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()


def format_value(v) -> str:
    """Shortest decimal that parses back to the same float32."""
    return np.format_float_positional(np.float32(v), unique=True, trim="0")


def write_word_vector_file(path: str | Path, tokens: Sequence[str],
                           vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or len(tokens) != vectors.shape[0]:
        raise InputError("need one vector row per token")
    with open(path, "w", encoding="utf-8") as f:
        for token, row in zip(tokens, vectors):
            f.write(token + " " + " ".join(format_value(v) for v in row) + "\n")
