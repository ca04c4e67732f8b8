"""
Distributes independent jobs (blocks of one schedule pass, Monte-Carlo shards)
across worker processes.
"""

import logging
import time
from multiprocessing import Pool, current_process
from typing import Any, Callable, List, Sequence

import tqdm

logger = logging.getLogger(__name__)


def _timed(job):
    fn, arg = job
    start = time.time()
    result = fn(arg)
    logger.debug(f"{current_process().name} done in {time.time() - start:.2f} sec")
    return result


def run_parallel(
    fn: Callable[[Any], Any],
    args: Sequence[Any],
    threads: int = 1,
    desc: str = "",
    progress: bool = True,
) -> List[Any]:
    """
    Maps `fn` over `args` keeping the input order. `fn` must be a module-level
    function so it pickles. With one thread everything runs in-process.
    """
    jobs = [(fn, arg) for arg in args]
    if threads <= 1 or len(jobs) <= 1:
        return [
            _timed(job)
            for job in tqdm.tqdm(jobs, desc=desc, disable=not progress)
        ]
    with Pool(min(threads, len(jobs))) as p:
        return list(
            tqdm.tqdm(
                p.imap(_timed, jobs), total=len(jobs), desc=desc, disable=not progress
            )
        )
