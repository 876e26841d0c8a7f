"""Blocked, thread-invariant Monte Carlo driver.

Trials are split into fixed-size blocks. Block b draws from a fresh
Generator seeded by SeedSequence((*master_key, b)), and block results
are folded in block order no matter which thread finished first, so a
run is byte-for-byte reproducible for fixed (master_seed, trials)
across thread counts and repeats.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 16384


def _key(master_seed) -> tuple:
    if isinstance(master_seed, tuple):
        return master_seed
    return (master_seed,)


def block_rng(master_seed, index: int) -> np.random.Generator:
    """Independent stream for one block; master_seed may be an int or a
    tuple of ints (sub-keys for nested estimators)."""
    ss = np.random.SeedSequence((*_key(master_seed), index))
    return np.random.Generator(np.random.PCG64(ss))


def block_sizes(trials: int) -> list[int]:
    if trials < 1:
        raise ValueError("trials must be a positive integer")
    sizes = [BLOCK_SIZE] * (trials // BLOCK_SIZE)
    if trials % BLOCK_SIZE:
        sizes.append(trials % BLOCK_SIZE)
    return sizes


def map_blocks(trials: int, master_seed, fn, threads: int = 1) -> list:
    """Run fn(block_index, block_trials, rng) across all blocks.

    Returns the per-block results in block-index order. threads <= 1 (or
    a single block) runs inline; otherwise blocks go to a thread pool,
    which helps because the heavy lifting inside fn is numpy releasing
    the GIL.
    """
    sizes = block_sizes(trials)
    if threads <= 1 or len(sizes) == 1:
        return [fn(b, nb, block_rng(master_seed, b)) for b, nb in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(fn, b, nb, block_rng(master_seed, b))
            for b, nb in enumerate(sizes)
        ]
        return [f.result() for f in futures]
