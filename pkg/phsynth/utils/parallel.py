import logging
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)


def parallel_map(fn, items, threads=1):
    """
    Map `fn` over `items`, preserving order.

    With threads > 1 the calls run in a thread pool; numpy and LAPACK release
    the GIL so frequency sweeps scale across cores. The first exception raised
    by any call propagates to the caller.
    """
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    logger.debug(f"Mapping {len(items)} items over {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
