"""Counter-based random streams for reproducible, order-independent Monte Carlo.

Every random draw in this package comes from a Philox generator whose 128-bit
key is derived by hashing a ``(seed, *path)`` tuple, e.g.
``stream(12345, 1789, "gff")`` for the field of sample 1789 of experiment
12345.  Streams are therefore independent of scheduling: worker pools can
process sample indices in any order and still produce identical results.

For one-shot Bernoulli decisions (edge crossings) constructing a Generator is
too slow, so :func:`uniform` turns the key hash itself into a single uniform
variate.
"""

import hashlib

import numpy as np

_TWO128 = float(2**128)


def _digest(seed, path):
    payload = repr((int(seed),) + tuple(path)).encode()
    return hashlib.blake2b(payload, digest_size=16).digest()


def stream(seed, *path):
    """Return a ``numpy.random.Generator`` keyed by ``(seed, *path)``.

    ``path`` entries may be ints, floats, strings or nested tuples thereof;
    they are hashed via their repr, which is stable across processes.
    """
    key = int.from_bytes(_digest(seed, path), "little")
    return np.random.Generator(np.random.Philox(key=key))


def uniform(seed, *path):
    """One uniform variate in [0, 1) keyed by ``(seed, *path)``, no Generator."""
    return int.from_bytes(_digest(seed, path), "little") / _TWO128
