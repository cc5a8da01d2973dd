"""Row-parallel evaluation of O(N^2) pairwise sums with a fixed reduction order.

Every pairwise routine is written as a function of a contiguous block of
outer indices ``[lo, hi)``. Each row is reduced over the inner index in
increasing order (see :func:`ordered_sum`), so the value of a row never
depends on how rows are grouped into blocks or on how many threads run them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

# rows per block; bounds the (block, N, d) temporaries
BLOCK_ROWS = 128

_threads = 1
_pool: ThreadPoolExecutor | None = None


def set_threads(k: int) -> None:
    global _threads, _pool
    k = int(k)
    if k < 1:
        raise ValueError("thread count must be >= 1")
    if k != _threads and _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None
    _threads = k


def get_threads() -> int:
    return _threads


def _executor() -> ThreadPoolExecutor:
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads)
    return _pool


def ordered_sum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along ``axis`` strictly in increasing index order.

    numpy reduces the leading axis of a C-contiguous array one slice at a
    time, so the reduced axis is moved to the front first. Hot loops build
    their arrays in that layout already and the move is free.
    """
    a = np.ascontiguousarray(np.moveaxis(a, axis, 0))
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:], dtype=a.dtype)
    return np.add.reduce(a, axis=0)


def map_rows(func: Callable[[int, int], np.ndarray], n: int, block: int | None = None) -> np.ndarray:
    """Evaluate ``func(lo, hi)`` over row blocks covering ``range(n)`` and stack the results."""
    block = block or BLOCK_ROWS
    if _threads > 1:
        # split evenly so that every worker gets a share even for small n
        block = max(1, min(block, -(-n // _threads)))
    bounds = [(lo, min(lo + block, n)) for lo in range(0, n, block)]
    if _threads == 1 or len(bounds) == 1:
        parts = [func(lo, hi) for lo, hi in bounds]
    else:
        parts = list(_executor().map(lambda b: func(*b), bounds))
    return np.concatenate(parts, axis=0)


def default_threads_from_env() -> int:
    try:
        return max(1, int(os.environ.get("PALIGN_THREADS", "1")))
    except ValueError:
        return 1
