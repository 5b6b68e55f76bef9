"""One root seed, split deterministically per named consumer."""
from __future__ import annotations

import zlib

import numpy as np


def rng_for(seed: int, consumer: str) -> np.random.Generator:
    """Independent generator for one consumer (``"init"``, ``"shuffle"``, ...) of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1),
                                                         zlib.crc32(consumer.encode())]))
