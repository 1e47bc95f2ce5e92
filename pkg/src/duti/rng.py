"""Seeded random streams.

Every generator draws from Philox (a counter-based 64-bit bit generator),
keyed by ``(seed, stream name)`` so that independent consumers never share
a stream and results do not depend on call order across consumers.
"""
import zlib

import numpy as np

RNG_ALGORITHM = "philox4x64-numpy/1"


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, stream: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_key(stream),))
    return np.random.Generator(np.random.Philox(ss))
