"""BLAS thread control.

Replay mode pins every BLAS/OpenMP pool to one thread so floating-point
reductions run in a fixed order.  Otherwise ``FASTAMC_THREADS`` (if set) caps
the pools; unset leaves the library defaults alone.
"""

from __future__ import annotations

import contextlib
import os

from threadpoolctl import threadpool_limits

THREADS_ENV = "FASTAMC_THREADS"


def thread_count(replay: bool) -> int | None:
    if replay:
        return 1
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@contextlib.contextmanager
def compute_threads(replay: bool = False):
    n = thread_count(replay)
    if n is None:
        yield None
        return
    with threadpool_limits(limits=n):
        yield n
