"""Deterministic derivation of independent random substreams.

Every source of randomness in a run (model init, partitioning, per-round
client sampling, per-epoch batch order, synthetic data, Monte-Carlo noise)
gets its own generator derived from the single master seed plus a purpose
tag and integer indices. Streams are therefore independent of execution
order and worker count.
"""

import hashlib

import numpy as np


def derive_seed(master: int, tag: str, *indices: int) -> int:
    """Hash (master, tag, indices) into a 128-bit integer seed."""
    text = f"{master}/{tag}/" + "/".join(str(i) for i in indices)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")


def substream(master: int, tag: str, *indices: int) -> np.random.Generator:
    """Return a fresh generator for the named substream."""
    return np.random.default_rng(derive_seed(master, tag, *indices))
