"""Named, independent RNG sub-streams derived from one integer seed."""
from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV = "EVENTFORMER_SEED"


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for sub-stream ``name`` (optionally per item ``index``) of ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, index)])


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0
