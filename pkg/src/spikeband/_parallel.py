"""Fork-join helpers over cached thread pools.

The numba kernels release the GIL, so plain threads give real parallelism.
Partition tasks and the second halves of dual-thread partitions run on
separate pools, so a partition task waiting on its partner half can never
starve the pool it is running on.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache


@lru_cache(maxsize=None)
def _pool(role: str, workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"spike-{role}")


def fork_join(tasks, workers: int, role: str = "part"):
    """Run callables concurrently on up to ``workers`` threads; results in order."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn() for fn in tasks]
    pool = _pool(role, min(workers, len(tasks)))
    futures = [pool.submit(fn) for fn in tasks[1:]]
    first = tasks[0]()
    return [first] + [f.result() for f in futures]


def pair(fn_a, fn_b, concurrent: bool, workers: int = 1):
    """Run two callables, the second on a helper thread when ``concurrent``."""
    if not concurrent:
        return fn_a(), fn_b()
    fut = _pool("half", max(1, workers)).submit(fn_b)
    a = fn_a()
    return a, fut.result()
