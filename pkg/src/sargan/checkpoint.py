"""Binary checkpoint format shared by every model in the package.

Layout: magic ``SGN1``, u32 tensor count, then per tensor in lexicographic
name order: u16 name length, UTF-8 name, u8 rank, u32 per dimension, raw
little-endian float32 values.  All integers little-endian.  Save/load round
trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SGN1"


class CheckpointError(Exception):
    """Missing, truncated, or corrupt checkpoint file."""


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}: {blob[:4]!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint: {path}")
        piece = blob[pos : pos + n]
        pos += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
    if pos != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return tensors
