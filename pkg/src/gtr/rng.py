"""Counter-based random streams with worker-independent results.

Every Monte Carlo job is split into fixed-size blocks.  Block ``k`` of the
job keyed ``key`` draws from its own Philox stream derived from
``(seed, key, k)``, so the combined result depends only on the seed, never
on how blocks are distributed over workers.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 4096


def key_of(name: str) -> int:
    """Stable 32-bit integer for a request name."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, key: int | str = 0, block: int = 0) -> np.random.Generator:
    if isinstance(key, str):
        key = key_of(key)
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(key), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def blocks(total: int, size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """``(block_index, block_size)`` pairs covering ``total`` trials."""
    if total < 0:
        raise ValueError("trial count must be non-negative")
    out = []
    done = 0
    k = 0
    while done < total:
        m = min(size, total - done)
        out.append((k, m))
        done += m
        k += 1
    return out


def run_blocks(fn: Callable, args: Sequence, total: int, seed: int, key: int | str,
               workers: int = 1, size: int = BLOCK_SIZE) -> list:
    """Evaluate ``fn(*args, rng, n)`` for every block and return results in block order.

    ``fn`` must be picklable (a module-level function) when ``workers > 1``.
    """
    jobs = [(fn, tuple(args), seed, key, k, m) for k, m in blocks(total, size)]
    if workers <= 1 or len(jobs) <= 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_one, jobs))


def _one(job):
    fn, args, seed, key, k, m = job
    return fn(*args, stream(seed, key, k), m)
