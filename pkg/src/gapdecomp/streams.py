"""Counter-based random streams.

Every random draw in the package comes from a Philox-4x64 generator whose
key is derived from ``(master seed, *path)`` through numpy's ``SeedSequence``
hash. A stream therefore depends only on its logical address (for example
``("iteration", replicate, i)``), never on which thread asks for it or in
what order, which is what makes parallel runs reproducible bit for bit.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream path components must be non-negative")
    return part


def stream(seed, *path):
    """Return an independent ``numpy.random.Generator`` for ``path``.

    Parameters
    ----------
    seed : int
        Master seed, interpreted modulo 2**64.
    *path : int or str
        Logical address of the stream. Strings are hashed with CRC32.
    """
    seed = int(seed) & _MASK64
    words = [seed & 0xFFFFFFFF, seed >> 32] + [_word(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
