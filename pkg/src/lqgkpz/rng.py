"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, stream name, index, block)``.  Two workers asking for the
same key get the same numbers, so splitting an ensemble across processes
reproduces the serial result exactly.
"""
from __future__ import annotations

import hashlib

import numpy as np

BLOCK_ROWS = 64


def _name_key(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *index)``."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_key(name),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


def white_noise(shape: tuple[int, ...], seed: int, name: str, *index: int) -> np.ndarray:
    """Standard normal array of ``shape`` drawn block-by-block along axis 0.

    Each block of ``BLOCK_ROWS`` leading rows has its own stream, so blocks can
    be produced in any order (or by different workers) with identical output.
    """
    out = np.empty(shape, dtype=np.float64)
    n0 = shape[0]
    for b, start in enumerate(range(0, n0, BLOCK_ROWS)):
        stop = min(start + BLOCK_ROWS, n0)
        out[start:stop] = stream(seed, name, *index, b).standard_normal((stop - start,) + tuple(shape[1:]))
    return out
