"""Seed plumbing.

Every random stream is a PCG64 generator keyed by a root seed plus a tuple
of nonnegative integers (sample size, method, replicate, ...), so results do
not depend on the order in which work is scheduled.
"""
from __future__ import annotations

import numpy as np


def stream(root: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in key))


def as_generator(seed) -> np.random.Generator:
    """Accept an int, a ``SeedSequence`` or an existing ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if isinstance(seed, tuple):
        return np.random.Generator(np.random.PCG64(stream(*seed)))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
