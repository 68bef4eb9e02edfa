"""Seeded random streams.

Every random draw in the package goes through :func:`stream`, which keys a
PCG64 generator on ``(seed, purpose)``. A replication with seed ``s`` thus
gets independent, reproducible sub-streams for its ground truth, its sample
and its solver runs, and re-running with the same seed is bit-identical.
"""
import numpy as np

GROUND_TRUTH = 0
DATA = 1
SOLVER = 2


def stream(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seeds must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), purpose, *extra])))
