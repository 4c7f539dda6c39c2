import logging
import os
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)


def resolve_threads(threads=None):
    """
    Worker count: the explicit value, else RCCLT_THREADS, else 1.
    """
    if threads is None:
        threads = int(os.environ.get("RCCLT_THREADS", "1"))
    return max(1, int(threads))


def parallel_map(fn, items, threads=1):
    """
    Apply fn to every item and return the results in item order.

    Each result is written into the slot of its item, so the output never
    depends on scheduling. With threads == 1 the items run in the calling
    thread.
    """
    items = list(items)
    slots = [None] * len(items)
    if threads <= 1 or len(items) <= 1:
        for i, item in enumerate(items):
            slots[i] = fn(item)
        return slots
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(fn, item): i for i, item in enumerate(items)}
        for future, i in futures.items():
            slots[i] = future.result()
    return slots
