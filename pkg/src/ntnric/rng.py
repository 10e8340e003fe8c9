"""Named, seeded random streams.

Every random draw in the package comes from a generator built here, keyed by
an integer seed plus a tuple of names/integers.  Two calls with equal keys
give generators that produce identical sequences; different keys give
statistically independent streams.
"""

import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        return int(key) % 2**64
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported stream key type: {type(key).__name__}")


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` for ``(seed, *keys)``."""
    if seed is None:
        raise ValueError("a seed is required; wall-clock seeding is not supported")
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
