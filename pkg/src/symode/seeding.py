"""Deterministic derivation of independent RNG streams.

Streams are keyed by hashing the global seed together with structured
indices (skeleton/constant-set/initial-value, epoch, record id, ...), so
results do not depend on scheduling order when work is parallelized.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash repr-able parts into a stable 64-bit seed."""
    payload = "\x1f".join(repr(p) for p in parts).encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
