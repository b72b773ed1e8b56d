"""Deterministic per-experiment random generators.

One base seed covers a whole run; each sub-experiment derives its own
independent stream from a stable text label, so adding or reordering
experiments never perturbs the streams of existing ones.
"""

import zlib

import numpy as np


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Generator for ``label`` under ``seed``; stable across runs and platforms."""
    tag = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
