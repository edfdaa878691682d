"""Deterministic seed streams.

Every random draw in the package comes from ``numpy.random.default_rng`` seeded
by :func:`derive_seed`, so a run is a pure function of the master seed.  The
mixing function is SplitMix64 (Steele, Lea & Flood), applied once per
component::

    s0 = splitmix64(master)
    s1 = splitmix64(s0 ^ stream_tag)
    seed = splitmix64(s1 ^ index)

All arithmetic is modulo 2**64, so the result is identical on every platform.
"""

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags (ASCII of the stream name, packed big-endian)
STREAM_STATE = 0x5354415445            # "STATE"
STREAM_SHADOW = 0x534841444F57         # "SHADOW"
STREAM_SPLIT = 0x53504C4954            # "SPLIT"
STREAM_FOLDS = 0x464F4C4453            # "FOLDS"
STREAM_PCA = 0x504341                  # "PCA"


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, stream_tag: int, index: int) -> int:
    s = splitmix64(int(master_seed) & MASK64)
    s = splitmix64(s ^ (int(stream_tag) & MASK64))
    return splitmix64(s ^ (int(index) & MASK64))


def rng_for(master_seed: int, stream_tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, stream_tag, index))


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
