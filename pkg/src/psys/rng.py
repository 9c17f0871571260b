"""Keyed random substreams.

Every random draw in the package comes from a generator keyed by
``(seed, stream, index...)``, so a result never depends on how work is
split across threads.
"""
from __future__ import annotations

import numpy as np

# stream tags
PATHS = 1
POINTS = 2
ATOMS = 3
REPLICATE = 4
QMC = 5
MARKS = 6

MASK64 = (1 << 64) - 1


def substream(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & MASK64, *(int(k) & MASK64 for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed."""
    entropy = [int(seed) & MASK64, *(int(k) & MASK64 for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed)
