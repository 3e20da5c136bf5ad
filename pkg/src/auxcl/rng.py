"""Repo-wide deterministic random streams.

All stochastic choices (synthesis, batch shuffles, view draws, adapter
init) derive from numpy's PCG64 keyed by the run seed plus a tuple of
string/int tags. Identical seeds therefore reproduce runs bit-for-bit on
any platform.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    # stable across processes and platforms, unlike hash()
    return zlib.crc32(str(tag).encode("utf-8"))


def stream(seed: int, *tags) -> np.random.Generator:
    """Return an independent PCG64 generator for (seed, *tags)."""
    key = tuple(_tag_key(t) for t in tags)
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
