"""
Column worker pool.

Evaluates independent columns concurrently while handing results back
strictly in column order, so the responder can stream tagged scores and
stop as soon as the querier says Done.
"""
import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Deque, Iterator, Optional, Tuple, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Columns submitted ahead of the one being streamed, per thread
LOOKAHEAD_PER_THREAD = 2


class ColumnWorkerPool:
    """
    Bounded pool for per-column evaluation.

    Features:
    - threads=1 evaluates inline, no executor
    - at most threads * LOOKAHEAD_PER_THREAD columns in flight
    - results yielded in column order as (column, result)
    - closing the iterator early cancels columns not yet started
    """

    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = threads
        self._executor: Optional[ThreadPoolExecutor] = None

    def __enter__(self) -> "ColumnWorkerPool":
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="column")
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None

    def imap(self, fn: Callable[[int], T], columns: int) -> Iterator[Tuple[int, T]]:
        if self._executor is None:
            for j in range(columns):
                yield j, fn(j)
            return

        window = self.threads * LOOKAHEAD_PER_THREAD
        pending: Deque[Tuple[int, Future]] = deque()
        next_column = 0
        try:
            while next_column < columns or pending:
                while next_column < columns and len(pending) < window:
                    pending.append((next_column, self._executor.submit(fn, next_column)))
                    next_column += 1
                j, future = pending.popleft()
                yield j, future.result()
        finally:
            cancelled = sum(1 for _, f in pending if f.cancel())
            if cancelled:
                logger.debug(f"[COLUMN-POOL] cancelled {cancelled} queued columns")
