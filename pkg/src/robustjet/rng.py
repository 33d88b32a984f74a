"""Counter-style random streams.

Every stochastic step in the pipeline draws from a generator keyed by a tuple
of integers (seed, purpose, row, ...).  Work can then be split across any
number of workers without changing a single draw.
"""

import os

import numpy as np

# purpose tags keep streams for different pipeline stages disjoint
GEN = 1
ATTACK = 2
TRAIN_SHUFFLE = 3
TRAIN_NOISE = 4
INIT = 5
SYNTH = 6


def stream(seed: int, *key: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ROBUSTJET_WORKERS", "1")))
    except ValueError:
        return 1
