"""Per-head fan-out helpers.

KVTRIAGE_THREADS caps the worker count (0 or unset = auto). The hot
kernels run with the GIL released, so threads genuinely overlap.
"""

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "KVTRIAGE_THREADS"


def thread_count():
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        count = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if count < 0:
        raise ValueError(f"{THREADS_ENV} must be nonnegative")
    if count == 0:
        return os.cpu_count() or 1
    return count


def parallel_map(fn, items):
    """Ordered map over items, threaded when more than one worker is allowed."""
    items = list(items)
    workers = min(thread_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
