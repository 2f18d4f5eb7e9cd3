"""Order-independent seed derivation.

Every random stream is keyed by a tuple of integers, e.g.
``(master, n_index, delta_index, replicate, stream_id, column)``. The key is
folded into a single 64-bit word with the SplitMix64 finalizer::

    h = mix(master)
    for k in keys:
        h = mix(h ^ mix(k + 0x9E3779B97F4A7C15))

and ``h`` seeds a counter-based Philox generator. The result depends only on
the key, never on how many draws other streams made or on worker scheduling.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# stream identifiers
REGRESSORS = 1
ETA = 2
EPS = 3
ZETA = 4


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a 64-bit word."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    h = mix64(int(master))
    for k in keys:
        h = mix64(h ^ mix64((int(k) + GOLDEN) & MASK64))
    return h


def generator(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(master, *keys)))
