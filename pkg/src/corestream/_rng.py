"""Deterministic per-instance random generators derived from one root seed.

Every source of randomness in the package is a numpy Generator obtained
through child_rng, keyed by (module tag, instance id parts). The mapping is
order-independent: a mechanism created later in one run and earlier in
another still receives the same stream, which is what makes metrics
byte-reproducible for a fixed seed and config.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_digest(parts: tuple) -> list[int]:
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    raw = h.digest()
    return [int.from_bytes(raw[i : i + 4], "little") for i in range(0, 16, 4)]


def child_rng(root_seed: int, *key: object) -> np.random.Generator:
    """Return a Generator keyed by (root_seed, *key), independent of call order."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + _key_digest(tuple(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))
