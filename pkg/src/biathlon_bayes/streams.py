"""Deterministic derivation of independent RNG streams from integer keys."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def seed_sequence(*keys: int) -> np.random.SeedSequence:
    """SeedSequence keyed by one or more integers (masked to 64 bits so
    negative seeds are accepted)."""
    return np.random.SeedSequence([int(k) & MASK64 for k in keys])


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(*keys))
