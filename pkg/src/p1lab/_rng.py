"""Deterministic RNG streams.

Every random stage derives its own counter-based Philox generator from the
master seed and a tuple of labels (stage name, trial index, ...).  Streams
are therefore independent of execution order and of the number of worker
threads, which is what makes reruns byte-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(master_seed: int, *labels) -> np.ndarray:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(master_seed)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return np.frombuffer(h.digest(), dtype=np.uint64).copy()


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """Philox generator keyed by blake2b(master seed, labels...)."""
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, *labels)))
