"""Deterministic RNG derivation from named key paths.

Every random decision in the harness draws from a generator derived from the
master seed plus a stable string key, so adding or removing one stage never
perturbs the draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash the key path to a 64-bit seed, stable across runs and platforms."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
