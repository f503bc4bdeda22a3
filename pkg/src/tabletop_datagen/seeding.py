"""Counter-based seed derivation.

Every random draw in the package comes from a ``random.Random`` whose seed is
derived from ``(master_seed, *keys)`` through a SplitMix64 chain. Streams are
addressed by name, so adding a new consumer never shifts the draws of an
existing one, and the result does not depend on scheduling order.
"""

from __future__ import annotations

import functools
import hashlib
import random

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output step applied to ``x`` (mod 2**64)."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _key_to_int(key: int | str) -> int:
    if isinstance(key, bool):
        raise TypeError("bool is not a valid stream key")
    if isinstance(key, int):
        return key & MASK64
    return _hash_key(key)


@functools.lru_cache(maxsize=4096)
def _hash_key(key: str) -> int:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive(seed: int, *keys: int | str) -> int:
    """Derive a 64-bit seed from ``seed`` and an ordered tuple of keys."""
    h = splitmix64(seed & MASK64)
    for key in keys:
        h = splitmix64(h ^ _key_to_int(key))
    return h


def stream(seed: int, *keys: int | str) -> random.Random:
    return random.Random(derive(seed, *keys))
