"""Named, splittable random streams derived from a single master seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the PCG64 generator for sub-stream ``name`` of master ``seed``.

    Distinct names give statistically independent streams, so re-seeding one
    stage (say ``"trajectory"``) never perturbs another (``"mdp-gen"``).
    """
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.PCG64(ss))
