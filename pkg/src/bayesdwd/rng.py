"""Deterministic named RNG substreams.

Every stochastic routine in the package derives its generator from a base
seed plus a short path of labels, so independent units of work (normalizer
grid points, simulation replications, bootstrap resamples, chains) get
reproducible, non-overlapping streams regardless of execution order.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "substream_int", "substream_key"]


def substream_key(*path: int | str) -> tuple[int, ...]:
    """Map a mixed label path to a ``SeedSequence`` spawn key.

    String labels hash through CRC-32, which is stable across platforms and
    library versions; integer labels pass through unchanged and must be
    nonnegative.
    """
    key = []
    for part in path:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            value = int(part)
            if value < 0:
                raise ValueError("substream path integers must be nonnegative")
            key.append(value)
    return tuple(key)


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the named substream ``path`` of ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=substream_key(*path))
    return np.random.default_rng(ss)


def substream_int(seed: int, *path: int | str) -> int:
    """A derived integer seed, for APIs that take a plain seed."""
    return int(substream(seed, *path).integers(0, 2**63 - 1))
