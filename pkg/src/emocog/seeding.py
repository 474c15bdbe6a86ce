"""Counter-based seed splitting.

Every subsystem derives its generator from the single run seed plus a path
of string/int keys, so reseeding one subsystem never shifts another.
"""

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys)))
