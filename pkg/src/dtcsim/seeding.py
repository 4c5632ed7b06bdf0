"""Deterministic seed derivation from a root seed and integer keys."""
from __future__ import annotations

import numpy as np


def derive_seed(root: int, *keys: int) -> int:
    """Return a 63-bit integer seed for the stream ``(root, *keys)``.

    Streams with different key tuples are statistically independent, and the
    mapping is stable across platforms and numpy versions.
    """
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in keys))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int(((int(hi) << 32) | int(lo)) & ((1 << 63) - 1))


def rng(root: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
