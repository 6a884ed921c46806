"""Ordered fan-out over fixed-size row chunks.

Chunk boundaries depend only on the row count, never on the worker count, so
results reduced in chunk order are bitwise identical for any ``threads``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

CHUNK_ROWS = 512


def chunk_slices(n_rows: int, size: int = CHUNK_ROWS) -> list[slice]:
    return [slice(i, min(i + size, n_rows)) for i in range(0, n_rows, size)]


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
