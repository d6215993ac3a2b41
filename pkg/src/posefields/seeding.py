"""Deterministic seed derivation.

Every randomized operation takes an integer seed and derives per-purpose
sub-seeds by hashing, so results are stable across runs, platforms, and
task orderings (sub-seeds depend on names, not list positions).
"""

import hashlib

import numpy as np


def derive_seed(base_seed: int, *parts) -> int:
    """Derive a 63-bit sub-seed from a base seed and string/int labels."""
    text = str(int(base_seed)) + "".join("|" + str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(base_seed: int, *parts) -> np.random.Generator:
    """A PCG64 generator seeded from derive_seed(base_seed, *parts)."""
    return np.random.default_rng(derive_seed(base_seed, *parts))
