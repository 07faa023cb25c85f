"""Bounded thread pool where each worker owns its own backend instance."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")
B = TypeVar("B")


def map_owned(
    fn: Callable[[T, B], R],
    items: Iterable[T],
    factory: Callable[[], B],
    workers: int = 1,
) -> list[R]:
    """``[fn(item, backend) for item in items]`` with one backend per worker thread.

    Results keep input order. Backends with a ``close`` method are closed
    afterwards.
    """
    items = list(items)
    made: list = []
    lock = threading.Lock()
    local = threading.local()

    def backend():
        if not hasattr(local, "b"):
            local.b = factory()
            with lock:
                made.append(local.b)
        return local.b

    try:
        if workers <= 1:
            return [fn(item, backend()) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda item: fn(item, backend()), items))
    finally:
        for b in made:
            close = getattr(b, "close", None)
            if close is not None:
                close()
