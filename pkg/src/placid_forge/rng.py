"""Deterministic seeding utilities.

All randomness in the package flows through numpy PCG64 generators created
here. Child seeds are derived by hashing, so independent stages never share
a random stream and batch subsets reproduce identically.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: object) -> int:
    """Derive a stable 64-bit seed from arbitrary parts.

    Parts are rendered to text and hashed with BLAKE2b, so the result is
    identical across platforms and Python processes.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & _MASK64


def make_rng(seed: int) -> np.random.Generator:
    """Create a PCG64 generator for the given 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed & _MASK64))
