"""Replica-level parallelism with thread-count-independent results.

Work is cut into fixed-size chunks whose composition does not depend on the
number of workers, and results are reassembled in chunk order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

R = TypeVar("R")

CHUNK = 512


def map_chunks(fn: Callable[[int, int], R], n: int, *, chunk: int = CHUNK,
               threads: int = 1) -> List[R]:
    """Apply ``fn(start, stop)`` to consecutive chunks of ``range(n)``."""
    bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
