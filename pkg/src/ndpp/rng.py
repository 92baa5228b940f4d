"""Named random streams.

Every random consumer in the package takes a ``numpy.random.Generator``.
Top-level entry points derive those generators from ``(seed, label)`` so
that adding a new consumer never shifts the numbers seen by an existing one:
the label is hashed (CRC-32) into the ``spawn_key`` of a ``SeedSequence``
and the result drives a PCG64 bit generator.
"""

import zlib

import numpy as np


def stream(seed, label):
    """Return an independent PCG64 generator for ``(seed, label)``."""
    key = zlib.crc32(label.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng):
    """Coerce ``None``/int/Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
