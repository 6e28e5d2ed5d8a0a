"""Seed derivation.

Every sample draws from a generator keyed on ``(master_seed, *path)`` so results do
not depend on how samples are split across workers.
"""
from __future__ import annotations

import numpy as np


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministic 63-bit child seed for the sample at ``path``."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def rng_for(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]]))
