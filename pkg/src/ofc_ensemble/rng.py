"""Named, splittable random streams.

Every consumer derives its own generator from ``(seed, *keys)`` so that work
executed in parallel draws exactly the numbers a serial run would.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream keys must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key(k) for k in keys))


def stream(seed: int, *keys) -> np.random.Generator:
    """Return a PCG64 generator for the stream named by ``keys``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_int(seed: int, *keys) -> int:
    """A 31-bit integer seed, for libraries that only accept ``int`` seeds."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0] >> 1)
