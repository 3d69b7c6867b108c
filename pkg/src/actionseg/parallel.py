"""Process-pool fan-out with a sequential fallback.

Work items carry everything the task needs (picklable tuples), so results are
identical whether jobs is 1 or N; the pool only changes wall-clock time.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

from .core import ContractError


def parallel_map(fn, items, jobs: int = 1) -> list:
    if jobs < 1:
        raise ContractError(f"jobs must be >= 1, got {jobs}")
    items = list(items)
    if jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
