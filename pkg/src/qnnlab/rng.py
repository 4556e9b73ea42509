"""Counter-based random streams.

Every consumer derives its generator from ``(seed, *stream)`` so that results
do not depend on the order in which work items are scheduled.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by a master seed and a tuple of stream counters."""
    words = [int(seed) & _MASK64, *(int(s) & _MASK64 for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def item_seed(master: int, index: int) -> int:
    return (int(master) ^ int(index)) & _MASK64
