"""Deterministic substreams and order-preserving parallel map."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = ["substream_seed", "substream_rng", "chunked", "parallel_map"]

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def substream_seed(master: int, index: int) -> int:
    """64-bit seed for substream ``index`` of ``master``.

    ``index -> seed`` is injective for a fixed master: the index enters
    through an odd multiplier mod 2**64 and the finalizer is a bijection.
    """
    base = _splitmix64(int(master) & MASK64)
    return _splitmix64((base + (int(index) & MASK64) * GOLDEN) & MASK64)


def substream_rng(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master, index))


def chunked(items: Sequence, size: int) -> list:
    """Consecutive chunks of fixed size; the layout never depends on worker count."""
    return [items[i:i + size] for i in range(0, len(items), size)]


def parallel_map(fn: Callable, tasks: Iterable, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]`` with results in task order.

    ``fn`` must be a module-level callable when ``workers > 1``.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
