"""Seed fan-out for reproducible random streams.

Every random stream in a run is derived from the master seed plus a purpose tag and
integer keys (round, client id, ...). The tag is hashed with CRC-32 because Python's
built-in ``hash`` is salted per process.
"""

import zlib

import numpy as np

# Purpose tags used across the package
INIT = "init"
SPLIT = "split"
PARTITION = "partition"
SAMPLE = "sample"
SHUFFLE = "shuffle"
DP = "dp"
ATTACK = "attack"
TARGETS = "targets"


def tag_hash(tag: str) -> int:
    """Stable 32-bit hash of a purpose tag."""
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed_sequence(seed: int, tag: str, *keys: int) -> np.random.SeedSequence:
    """Build the SeedSequence for (seed, tag, keys...)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, tag_hash(tag)] + [int(k) for k in keys]
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, tag: str, *keys: int) -> np.random.Generator:
    """Independent generator for one purpose.

    Args:
        seed: Master seed of the run
        tag: Purpose tag (see module constants)
        *keys: Extra integer keys, e.g. round index and client id

    Returns:
        A numpy Generator that depends only on its arguments
    """
    return np.random.default_rng(derive_seed_sequence(seed, tag, *keys))
