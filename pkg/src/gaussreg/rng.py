"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator.  A stream is keyed by
``(seed, purpose)`` through ``SeedSequence``, so weight init, shuffling, noise
and splitting never share state and adding draws to one purpose does not shift
any other.
"""

import os

import numpy as np

STREAMS = {
    "init": 1,
    "shuffle": 2,
    "noise": 3,
    "split": 4,
    "corrupt": 5,
    "anomaly": 6,
}

SEED_ENV = "GAUSSREG_SEED"


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be unsigned, got {seed}")
    key = [int(seed), STREAMS[purpose], *map(int, extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else 0
