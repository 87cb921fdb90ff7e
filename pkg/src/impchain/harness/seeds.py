"""Per-realization random streams.

Stream ``i`` of master seed ``s`` is ``SeedSequence(s, spawn_key=(i,))``, the
same stream ``SeedSequence(s).spawn(...)[i]`` would give, but addressable
without spawning its predecessors.  Independent purposes within one
realization (disorder, impurity jitter) use a second spawn-key level.
"""
from __future__ import annotations

import numpy as np

DISORDER = 0
JITTER = 1


def realization_seed(master: int, index: int, purpose: int | None = None) -> np.random.SeedSequence:
    key = (int(index),) if purpose is None else (int(index), int(purpose))
    return np.random.SeedSequence(int(master), spawn_key=key)


def disorder_seed(master: int, index: int) -> np.random.SeedSequence:
    return realization_seed(master, index, DISORDER)


def jitter_seed(master: int, index: int) -> np.random.SeedSequence:
    return realization_seed(master, index, JITTER)


def seed_int(seq: np.random.SeedSequence) -> int:
    """A 64-bit integer summary of a stream, for provenance columns."""
    return int(seq.generate_state(1, np.uint64)[0])
