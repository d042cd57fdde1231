"""Deterministic random-stream derivation.

Every stochastic component draws from a generator derived from
``stream(seed, label, index, ...)`` so that parallel and serial execution
produce identical results and so that demo-collection, training, and
evaluation never share a stream (distinct labels).
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        # SeedSequence entropy must be nonnegative.
        return int(part) & 0xFFFFFFFFFFFFFFFF
    raise TypeError(f"stream key parts must be int or str, got {type(part)!r}")


def seed_sequence(*parts: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key(p) for p in parts])


def stream(*parts: int | str) -> np.random.Generator:
    """Generator keyed by a (seed, label, index, ...) tuple."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))


def derive_seed(*parts: int | str) -> int:
    """A 32-bit seed keyed the same way as :func:`stream`."""
    return int(seed_sequence(*parts).generate_state(1)[0])
