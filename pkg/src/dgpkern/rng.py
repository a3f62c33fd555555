"""Seeded random streams.

Every stream is a Philox-4x64 counter-based generator (numpy's
``np.random.Philox``) whose 128-bit key packs ``seed`` (low 64 bits),
a stream id and a lane index. Work is split into fixed-size lanes, so the
numbers a replicate sees depend only on (seed, stream, replicate index),
never on how lanes are scheduled.
"""

import numpy as np

LANE_SIZE = 10_000

MASK64 = (1 << 64) - 1


def lane_generator(seed, lane=0, stream=0):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    if not (0 <= lane < 2 ** 32 and 0 <= stream < 2 ** 32):
        raise ValueError("lane and stream must fit in 32 bits")
    key = seed | (((stream << 32) | lane) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def lanes(n, lane_size=LANE_SIZE):
    """(lane index, start, stop) covering ``range(n)``."""
    for b, start in enumerate(range(0, n, lane_size)):
        yield b, start, min(start + lane_size, n)
