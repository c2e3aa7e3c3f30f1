"""Counter-based random streams.

All randomness comes from numpy's Philox4x64 generator, which is a pure
function of a 128-bit key and a 256-bit counter. We key it with
``(seed, domain)`` and start the counter at ``(0, a, b, c)`` so that the
values drawn for, say, pass ``t`` of dropout layer ``j`` depend only on
``(seed, domain, t, j)`` and the unit's position in the stream. Nothing
holds shared state, so streams can be built in any order or thread.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# seed domains; training and test dropout never share streams
TEST_DROPOUT = 1
TRAIN_DROPOUT = 2
TRAIN_BATCHES = 3
TRAIN_AUGMENT = 4
INIT_WEIGHTS = 5
DATA_TRAIN = 6
DATA_TEST = 7
AUGMENT = 8
PERMUTATION = 9
BENCH_INPUT = 10


def stream(seed: int, domain: int, *counters: int) -> np.random.Generator:
    """Return a fresh generator for ``(seed, domain, counters...)``.

    Up to three counter words are accepted; the lowest counter word is left
    at zero and advances as values are drawn.
    """
    if len(counters) > 3:
        raise ValueError("at most three counter words")
    words = [0, *counters] + [0] * (3 - len(counters))
    key = np.array([seed & _MASK64, domain & _MASK64], dtype=np.uint64)
    counter = np.array([w & _MASK64 for w in words], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def bernoulli(shape, keep_prob: float, seed: int, domain: int, *counters: int) -> np.ndarray:
    """Float64 0/1 array with i.i.d. entries equal to 1 with ``keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in [0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape)
    u = stream(seed, domain, *counters).random(shape)
    return (u < keep_prob).astype(np.float64)
