"""Deterministic seed derivation.

One master seed fans out into independent named streams, so adding a new
randomness consumer never perturbs existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit child seed for a named stream."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
