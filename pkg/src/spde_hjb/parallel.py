"""Order-preserving parallel map used by the t-sweeps and grid sweeps."""

import os
from concurrent.futures import ThreadPoolExecutor

_THREADS = None


def set_threads(n):
    global _THREADS
    _THREADS = None if n is None else max(1, int(n))


def get_threads():
    if _THREADS is not None:
        return _THREADS
    env = os.environ.get("HJB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def pmap(fn, items, threads=None):
    """``[fn(x) for x in items]``, optionally on a thread pool; output order is input order."""
    items = list(items)
    n = threads or get_threads()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
