import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed.

    Each stream is keyed by (seed, crc32(name)), so adding a new consumer
    never shifts the draws of an existing one.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))
