"""Deterministic sub-seed derivation.

Every random consumer (split sampling, MF init, network init, epsilon-greedy,
replay sampling, ...) draws its seed from the single top-level run seed mixed
with a stable label, so no two consumers share a stream and reruns reproduce
bit-for-bit.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Mix a top-level seed with a label into an independent 63-bit seed."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Seeded generator for one named consumer."""
    return np.random.default_rng(derive_seed(seed, label))
