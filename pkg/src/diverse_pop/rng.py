"""Seeded, counter-based random streams.

Every run owns one ``numpy.random.Generator`` backed by Philox, keyed by the
run's 64-bit seed. Identical seeds give bit-identical streams, independent of
how many other runs execute in parallel.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0 or seed > SEED_MASK:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


def spawn_seeds(base_seed: int, count: int) -> list[int]:
    """Derive ``count`` distinct 64-bit seeds from ``base_seed``."""
    ss = np.random.SeedSequence(base_seed)
    seeds = [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(count)]
    if len(set(seeds)) != count:
        raise RuntimeError("seed collision while spawning streams")
    return seeds
