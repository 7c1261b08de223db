"""
Seeded generator hierarchy

Every random draw in the pipeline comes from a generator keyed by
(root seed, purpose...), so adding a consumer never shifts another
consumer's stream.

Usage:
    rng = derive_rng(cfg.seed, "scene", "scene1", 0, "gps")
"""

import hashlib

import numpy as np


def purpose_key(*purpose) -> int:
    """Stable 64-bit integer for a purpose path"""
    text = "/".join(str(part) for part in purpose)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed_sequence(seed: int, *purpose) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, purpose_key(*purpose)])


def derive_rng(seed: int, *purpose) -> np.random.Generator:
    """Independent PCG64 generator for (seed, purpose...)"""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, *purpose)))
