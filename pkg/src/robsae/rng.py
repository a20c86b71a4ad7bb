"""Counter-based random streams keyed by (seed, replication, role, attempt)."""

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


_GOLDEN = 0x9E3779B97F4A7C15


def replication_seed(base_seed: int, replication: int) -> int:
    """The r-th output of a splitmix64 sequence started at the hashed base seed.

    Adjacent base seeds land on unrelated sequences, so (b, r) and (b + 1, r - 1)
    do not collide as they would with ``base_seed + r``.
    """
    start = splitmix64(base_seed & _MASK64)
    return splitmix64((start + (replication & _MASK64) * _GOLDEN) & _MASK64)


def stream(seed: int, role: int, attempt: int = 0) -> np.random.Generator:
    """Philox generator for one variate role; area i consumes the i-th draw."""
    key = (seed << 64) | ((role & 0xFFFFFFFF) << 32) | (attempt & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))
