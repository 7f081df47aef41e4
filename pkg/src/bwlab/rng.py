"""Counter-based RNG streams.

Every consumer derives its own Philox stream from (seed, *tags), so parallel
runs are reproducible independently of scheduling and of how many sibling
streams exist.  String tags are hashed stably (crc32), ints pass through.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for the (seed, *tags) coordinate."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_tag_to_int(t) for t in tags))
    return np.random.Generator(np.random.Philox(seq))
