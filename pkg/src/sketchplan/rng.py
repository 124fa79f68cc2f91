"""Deterministic RNG stream derivation.

Every stochastic component draws from its own numpy Generator derived from the
run seed plus a stable tag path, so repeated runs with the same seed are
byte-identical and independent components never share a stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_int(tag) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """A PCG64 generator keyed by (seed, tags...)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
