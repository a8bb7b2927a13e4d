"""Process pool for partition-parallel stages.

``workers == 1`` runs everything in the calling process, which keeps single
worker runs free of pickling and fork overhead and makes them byte-for-byte
reproducible.
"""

from __future__ import annotations

import multiprocessing as mp
from typing import Callable, Sequence


def _context():
    try:
        return mp.get_context("fork")
    except ValueError:
        return mp.get_context()


class WorkerPool:
    def __init__(self, workers: int = 1, initializer: Callable | None = None, initargs: tuple = ()):
        if workers < 1:
            raise ValueError(f"worker count must be >= 1, got {workers}")
        self.workers = workers
        self._pool = None
        if workers == 1:
            if initializer is not None:
                initializer(*initargs)
        else:
            self._pool = _context().Pool(workers, initializer=initializer, initargs=initargs)

    def map(self, fn: Callable, items: Sequence) -> list:
        if self._pool is None:
            return [fn(it) for it in items]
        return self._pool.map(fn, items, chunksize=1)

    def warm_up(self) -> None:
        """Block until every worker process has started and run its initializer."""
        if self._pool is not None:
            self._pool.map(_noop, range(self.workers * 2), chunksize=1)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _noop(_):
    return None


def chunked(seq: Sequence, size: int) -> list:
    return [seq[i : i + size] for i in range(0, len(seq), size)]
