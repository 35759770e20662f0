"""
Named random streams derived from one run seed.

Every consumer asks for its own stream by a fixed key path, so adding draws in
one place never shifts the numbers another place sees.
"""
import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return int(key)


def make_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Independent generator for (seed, *keys)"""
    entropy = [_key_to_int(seed & 0xFFFFFFFF)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))

