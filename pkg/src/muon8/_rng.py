import zlib

import numpy as np


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(seed, *keys)``.

    String keys are hashed with crc32 so streams can be named.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            words.append(zlib.crc32(k.encode()))
        else:
            words.append(int(k))
    return np.random.default_rng(np.random.SeedSequence(words))
