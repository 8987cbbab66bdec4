"""Deterministic sub-seed derivation.

Every run takes a single integer seed; each randomized component derives
its own stream from the hash of the seed and the component name. Streams
are therefore independent, reproducible, and stable across platforms
(SHA-256 does not depend on the process hash seed).
"""

import hashlib

import numpy as np


def derive_seed(seed: int, component: str) -> int:
    """64-bit sub-seed for a named component."""
    digest = hashlib.sha256(f"{seed}:{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, component: str) -> np.random.Generator:
    """Fresh generator for a named component."""
    return np.random.default_rng(derive_seed(seed, component))
