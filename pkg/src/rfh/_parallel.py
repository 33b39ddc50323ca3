"""Deterministic parallel map capped by the RFH_THREADS environment variable."""
import os
from concurrent.futures import ThreadPoolExecutor


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("RFH_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map fn over items, preserving order; sequential when one worker."""
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
