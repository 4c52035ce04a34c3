"""Seeded random number generation.

Every random draw in this package flows through a Philox4x32-10 counter-based
generator keyed directly with the user-supplied seed. Philox is a published,
fully specified algorithm, so a (seed, draw sequence) pair identifies the same
output stream in any environment that ships the generator.

Per-item streams for batch work are derived as ``seed XOR item_index`` so that
workers can process items in any order or in parallel without sharing state.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return a Philox-backed generator keyed with `seed` (non-negative int)."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


def derive_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for the `index`-th item of a batch seeded with `seed`."""
    if index < 0:
        raise ValueError(f"index must be non-negative, got {index}")
    return make_rng(seed ^ index)
