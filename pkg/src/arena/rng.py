"""Deterministic randomness plumbing.

Every random choice in a session is drawn from a stream named by a label and
derived from a root seed, so reruns and rewinds see identical coins.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int | bytes, *labels: object) -> bytes:
    h = hashlib.sha256()
    h.update(seed if isinstance(seed, bytes) else int(seed).to_bytes(16, "little", signed=False))
    for label in labels:
        data = label if isinstance(label, bytes) else str(label).encode()
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return h.digest()


def stream(seed: int | bytes, *labels: object) -> np.random.Generator:
    """A PCG64 generator keyed by (seed, labels); stable across platforms."""
    key = int.from_bytes(derive_seed(seed, *labels)[:16], "little")
    return np.random.Generator(np.random.PCG64(key))


def trial_seed(seed: int, index: int) -> int:
    return int.from_bytes(derive_seed(seed, "trial", index)[:8], "little")


def child(rng: np.random.Generator) -> bytes:
    """Draw 16 fresh bytes from rng, usable as a seed for a sub-stream."""
    return rng.bytes(16)


def bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)
