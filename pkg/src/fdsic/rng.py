"""Seeded random streams.

Every stochastic draw in the package goes through :func:`generator`, which wraps
numpy's Philox4x64 counter-based bit generator.  Philox is fully specified
(Salmon et al., SC'11), so the same 64-bit key reproduces the same stream on any
platform and in any language that implements it.

Sub-seeds are derived from a global seed with a labeled hash::

    sub_seed = first 8 bytes (little endian) of SHA-256(f"{global_seed}/{label}")
"""

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def generator(seed):
    """Return a ``numpy.random.Generator`` on Philox keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=check_seed(seed)))


def derive_seed(global_seed, label):
    """Derive a labeled 64-bit sub-seed from ``global_seed``."""
    digest = hashlib.sha256(f"{check_seed(global_seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
