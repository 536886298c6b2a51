"""Bounded data-parallel execution with results in input order."""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Callable, Sequence
from typing import TypeVar

from pa_homeo_approx.config import DEFAULT_CONCURRENCY

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def run_concurrently(
    fn: Callable[[T], R],
    items: Sequence[T],
    concurrency: int = DEFAULT_CONCURRENCY,
    progress_callback: Callable[[R], None] | None = None,
) -> list[R]:
    """Apply ``fn`` to every item in worker threads, at most ``concurrency`` at a time.

    Parameters
    ----------
    fn : Callable[[T], R]
        Pure function applied to each item.
    items : Sequence[T]
        Work items.
    concurrency : int
        Maximum number of items in flight.
    progress_callback : Callable[[R], None] | None
        Optional callback invoked after each item completes.

    Returns
    -------
    list[R]
        Results in the order of ``items``, whatever the completion order.

    """
    semaphore = asyncio.Semaphore(concurrency)

    async def run_with_semaphore(item: T) -> R:
        async with semaphore:
            result = await asyncio.to_thread(fn, item)
            if progress_callback:
                progress_callback(result)
            return result

    results = await asyncio.gather(*[run_with_semaphore(item) for item in items])

    return list(results)


def map_ordered(
    fn: Callable[[T], R],
    items: Sequence[T],
    concurrency: int = DEFAULT_CONCURRENCY,
    progress_callback: Callable[[R], None] | None = None,
) -> list[R]:
    """Synchronous front end of :func:`run_concurrently`; runs inline for one worker."""
    if concurrency < 1:
        raise ValueError(f"Invalid concurrency {concurrency}. Must be >= 1")
    if concurrency == 1 or len(items) <= 1:
        results = []
        for item in items:
            result = fn(item)
            if progress_callback:
                progress_callback(result)
            results.append(result)
        return results
    logger.debug("Running %d items on %d workers", len(items), concurrency)
    return asyncio.run(run_concurrently(fn, items, concurrency, progress_callback))


def chunked(n: int, size: int) -> list[slice]:
    """Consecutive slices covering ``range(n)`` with at most ``size`` elements each."""
    size = max(1, size)
    return [slice(k, min(n, k + size)) for k in range(0, n, size)]
