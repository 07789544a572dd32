"""Deterministic derivation of independent random streams from one master seed.

Every stochastic step in the toolkit (signal phases, channel noise, shuffles,
parameter init, dropout masks) pulls its own child generator keyed by a path
of labels, so runs are reproducible and sub-streams never collide.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_element(p) -> int:
    # Strings are hashed with sha256 so the key does not depend on
    # PYTHONHASHSEED; ints are used as-is (mod 2**32 for SeedSequence).
    if isinstance(p, str):
        return int.from_bytes(hashlib.sha256(p.encode("utf8")).digest()[:4], "little")
    if isinstance(p, (int, np.integer)):
        return int(p) % (2**32)
    raise TypeError(f"seed path elements must be int or str, got {type(p).__name__}")


def seed_sequence(master: int, *path) -> np.random.SeedSequence:
    """SeedSequence for the child stream identified by ``path`` under ``master``."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_path_element(p) for p in path))


def child_rng(master: int, *path) -> np.random.Generator:
    """Independent Generator for the child stream identified by ``path``."""
    return np.random.default_rng(seed_sequence(master, *path))
