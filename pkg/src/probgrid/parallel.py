"""Ordered parallel map over independent tasks.

Results always come back in task order, so aggregation never depends on
the worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager

from .errors import ConfigError


def resolve_workers(workers=None):
    if workers is None:
        workers = os.environ.get("PROBGRID_WORKERS", 1)
    try:
        workers = int(workers)
    except (TypeError, ValueError):
        raise ConfigError(f"worker count must be an integer, got {workers!r}") from None
    if workers < 1:
        raise ConfigError("worker count must be at least 1")
    return workers


@contextmanager
def worker_pool(workers=1):
    """Yield a ``map``-like callable backed by ``workers`` processes."""
    workers = resolve_workers(workers)
    if workers == 1:
        yield lambda fn, tasks: list(map(fn, tasks))
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        def pmap(fn, tasks):
            tasks = list(tasks)
            chunk = max(1, len(tasks) // (4 * workers))
            return list(ex.map(fn, tasks, chunksize=chunk))
        yield pmap
