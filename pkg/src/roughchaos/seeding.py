"""Deterministic seed splitting.

Every random stream in the library is addressed by ``(seed, *stream_index)``
and turned into a generator through :class:`numpy.random.SeedSequence`, so the
numbers drawn for a given stream do not depend on how work is scheduled.
"""

from __future__ import annotations

import numpy as np


def split_seed(seed: int, *stream: int) -> int:
    """Child seed (unsigned 64-bit) for the stream ``stream`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))
