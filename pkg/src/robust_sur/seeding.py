"""Counter-based seed derivation.

Every randomized routine in the package namespaces its RNG stream by a
tuple of integers (master seed plus counters such as replication index,
equation index, subset index).  Deriving streams this way keeps results
identical regardless of evaluation order or thread count: stream (s, r)
is the same whether replication r runs first, last, or concurrently.
"""

from __future__ import annotations

import numpy as np

__all__ = ["seed_tuple", "stream"]


def seed_tuple(seed) -> tuple[int, ...]:
    """Normalize an int or tuple-of-ints seed to a flat tuple."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def stream(seed, *path: int) -> np.random.Generator:
    """Generator for the stream named by (seed, *path)."""
    return np.random.default_rng(np.random.SeedSequence((*seed_tuple(seed), *path)))
