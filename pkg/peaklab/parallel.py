import logging
import time
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)


def run_parallel(fn, items, workers=1, label="tasks"):
    """Map ``fn`` over ``items`` and return results in input order.

    Progress is logged per completed item. With ``workers <= 1`` the map runs
    inline, which keeps tracebacks readable.
    """
    items = list(items)
    total = len(items)
    results = [None] * total
    start = time.time()

    def _progress(done, index):
        if total:
            logger.debug(
                "progress %d/%d (%.1f%%) elapsed=%.1fs last=%s[%d]",
                done,
                total,
                done / total * 100,
                time.time() - start,
                label,
                index,
            )

    if workers <= 1 or total <= 1:
        for index, item in enumerate(items):
            results[index] = fn(item)
            _progress(index + 1, index)
        return results

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, item): index for index, item in enumerate(items)}
        done = 0
        for future in futures:
            index = futures[future]
            results[index] = future.result()
            done += 1
            _progress(done, index)
    return results
