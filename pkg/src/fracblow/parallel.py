"""Seed derivation and order-preserving fan-out for Monte Carlo work."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the unit of work named by ``(seed, *key)``.

    Streams depend only on the key, never on which worker runs them.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def chunk_bounds(n_items: int, chunk: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n_items)) for lo in range(0, n_items, chunk)]


def fan_out(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to every task, returning results in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def merge_sums(parts: Iterable[np.ndarray]) -> np.ndarray:
    """Sum per-chunk partial sums in a fixed order with pairwise accumulation."""
    stacked = np.stack(list(parts))
    return np.sum(stacked, axis=0)
