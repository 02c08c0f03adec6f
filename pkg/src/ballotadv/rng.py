"""Seeded, counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by a
``SeedSequence`` built from ``(seed, *path)``.  The path is a tuple of
non-negative integers naming the stream, e.g. ``(MC_TRIAL, trial_index)``
or ``(ATTACK_START, example_index, restart)``.  Because the key depends
only on the path and never on the order in which streams are requested,
parallel work reproduces serial results bit for bit.
"""
from __future__ import annotations

import zlib

import numpy as np

# Stream domain tags.  Keep values stable: changing one changes every result
# drawn from that domain.
ELECTION = 1
MC_TRIAL = 2
INIT = 3
SHUFFLE = 4
SYNTH = 5
SPLIT = 6
ATTACK_START = 7
CHANNEL = 8


def tag(name: str) -> int:
    """Stable integer tag for a free-form stream name."""
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for ``seed`` and stream ``path``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
