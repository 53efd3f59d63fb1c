"""Seed derivation shared by every stochastic routine.

Each independent task ``i`` under a master ``seed`` gets its own stream,
``SeedSequence(seed, spawn_key=(i, ...))``, so results depend only on
``(seed, task layout)`` and never on scheduling order or worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if seed is None:
        raise ValueError("a seed is required; there is no clock-based default")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for task ``key`` under ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def chunk_sizes(total: int, chunk: int) -> list[int]:
    """Fixed chunk layout; part of the reproducibility contract."""
    if total < 0:
        raise ValueError("total must be nonnegative")
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def parallel_map(fn: Callable[[T], R], tasks: Sequence[T] | Iterable[T], workers: int = 1) -> list[R]:
    """Ordered map, optionally on a thread pool. Output order follows input."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def child_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for a sub-run, derived like :func:`derive_rng` streams."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])
