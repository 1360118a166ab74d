"""Deterministic fan-out from one integer seed to independent RNG streams.

Every random draw in the package comes from a generator obtained here, keyed
by the run seed plus a purpose path such as ("stage2", "epoch", 3). The
derivation is a stable hash, so results do not depend on call order, thread
scheduling, or platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed, *path):
    """Collapse (seed, path...) into a 64-bit child seed via SHA-256."""
    key = "/".join([str(int(seed))] + [str(p) for p in path])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed, *path):
    """A numpy Generator seeded from the hashed (seed, path...) key."""
    return np.random.default_rng(derive_seed(seed, *path))
