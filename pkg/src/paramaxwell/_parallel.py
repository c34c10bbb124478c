"""Worker pool and fixed-chunk row products.

Work is always cut into the same chunks (``ROW_CHUNK`` rows) whatever the number
of workers, so results are bit-identical for any thread count. They may differ in
the last bit between calls with different row counts (BLAS picks kernels by shape).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

ROW_CHUNK = 64

_threads = 1
_pool: ThreadPoolExecutor | None = None


def max_threads() -> int:
    return os.cpu_count() or 1


def get_num_threads() -> int:
    return _threads


def set_num_threads(n: int) -> None:
    global _threads, _pool
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if n != _threads and _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None
    _threads = n


@contextmanager
def num_threads(n: int):
    old = get_num_threads()
    set_num_threads(n)
    try:
        yield
    finally:
        set_num_threads(old)


def _get_pool() -> ThreadPoolExecutor:
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads, thread_name_prefix="paramaxwell")
    return _pool


def run_chunks(fn, n_items: int, chunk: int) -> None:
    """Call ``fn(lo, hi)`` over ``[0, n_items)`` in fixed chunks, on the pool if threads > 1."""
    bounds = [(lo, min(lo + chunk, n_items)) for lo in range(0, n_items, chunk)]
    if _threads == 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            fn(lo, hi)
        return
    for fut in [_get_pool().submit(fn, lo, hi) for lo, hi in bounds]:
        fut.result()


def apply_rows(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """``x @ mat.T`` for ``x`` of shape ``(..., d)``, in fixed row chunks."""
    shape = x.shape
    rows = np.ascontiguousarray(x.reshape(-1, shape[-1]))
    out = np.empty((rows.shape[0], mat.shape[0]))
    mt = mat.T

    def work(lo, hi):
        np.matmul(rows[lo:hi], mt, out=out[lo:hi])

    run_chunks(work, rows.shape[0], ROW_CHUNK)
    return out.reshape(shape[:-1] + (mat.shape[0],))
