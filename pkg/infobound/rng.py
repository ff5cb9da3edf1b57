# rng.py
# Counter-based, splittable random streams. Every stream is keyed by an integer
# seed plus string tags, so any draw is reproducible from (tags, seed).
import zlib

import numpy as np


def stream_key(*keys) -> tuple:
    """Stable integer spawn key for a tuple of tags."""
    return tuple(zlib.crc32(str(key).encode("utf-8")) for key in keys)


def make_generator(seed: int, *keys) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative (got {seed})")
    sequence = np.random.SeedSequence(int(seed), spawn_key=stream_key(*keys))
    return np.random.Generator(np.random.Philox(sequence))
