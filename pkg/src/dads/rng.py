"""Named, independent random substreams derived from one master seed.

Every consumer of randomness asks for a stream by a path of names, e.g.
``substream(seed, "meas", 17)``. Streams are keyed by the path only, so
adding or removing a consumer never shifts another consumer's draws.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *names) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, *names)``."""
    seq = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                 spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(seq))
