"""Seeded random streams.

Every sampling step draws from PCG64 (O'Neill's permuted congruential
generator, 128-bit state, XSL-RR output) seeded through numpy's SeedSequence
with a ``spawn_key`` of ``(tag, counter...)``.  Because each draw is keyed by
its own counter, splitting work across processes reproduces the serial
stream exactly.  Tags are CRC-32 checksums of short ASCII names so the key
is portable.
"""

from __future__ import annotations

import zlib

import numpy as np


def tag(name: str) -> int:
    return zlib.crc32(name.encode("ascii"))


def substream(seed: int, name: str, *counters: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag(name), *map(int, counters)))
    return np.random.Generator(np.random.PCG64(ss))
