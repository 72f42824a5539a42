"""Evaluation pool module for roaflow - runs independent per-point work concurrently."""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, Iterable, List, Optional

from config import THREADS

logger = logging.getLogger(__name__)


@dataclass
class BatchRecord:
    """Bookkeeping for one gathered batch."""

    id: str
    size: int
    failures: int = 0
    started: datetime = field(default_factory=datetime.now)
    finished: Optional[datetime] = None

    @property
    def elapsed(self) -> float:
        end = self.finished or datetime.now()
        return (end - self.started).total_seconds()


class EvaluationPool:
    """Fans a function out over items on a thread pool and joins the results in order."""

    def __init__(self, threads: Optional[int] = None):
        """Initialize the pool.

        Args:
            threads: Worker count (defaults to ROAFLOW_THREADS or the CPU count)
        """
        self.threads = max(1, int(threads or THREADS))
        self.executor: Optional[ThreadPoolExecutor] = None
        self.last_batch: Optional[BatchRecord] = None
        self.batch_count = 0
        self.items_evaluated = 0
        self.failures = 0
        logger.debug(f"EvaluationPool initialized with {self.threads} threads")

    def _ensure_executor(self) -> ThreadPoolExecutor:
        if self.executor is None:
            self.executor = ThreadPoolExecutor(
                max_workers=self.threads, thread_name_prefix='roaflow-eval'
            )
        return self.executor

    def _start(self, batch_id: str, size: int) -> BatchRecord:
        record = BatchRecord(id=batch_id, size=size)
        self.last_batch = record
        self.batch_count += 1
        return record

    def _finish(self, record: BatchRecord, results: List[Any]):
        record.failures = sum(1 for r in results if isinstance(r, BaseException))
        record.finished = datetime.now()
        self.items_evaluated += record.size
        self.failures += record.failures
        if record.failures:
            logger.warning(f"{record.id}: {record.failures}/{record.size} evaluations failed")

    async def map(self, fn: Callable[[Any], Any], items: Iterable[Any],
                  batch_id: str = 'batch') -> List[Any]:
        """Evaluate fn on every item; results come back in input order.

        Exceptions raised by fn are returned in place of results so one bad
        point does not cancel the batch.

        Args:
            fn: Function of one item
            items: Items to evaluate
            batch_id: Label for logging and status

        Returns:
            List of results or exception instances, aligned with items
        """
        items = list(items)
        record = self._start(batch_id, len(items))
        if not items:
            record.finished = datetime.now()
            return []

        loop = asyncio.get_running_loop()
        executor = self._ensure_executor()
        futures = [loop.run_in_executor(executor, fn, item) for item in items]
        results = await asyncio.gather(*futures, return_exceptions=True)

        self._finish(record, results)
        logger.debug(f"{batch_id}: {len(items)} items in {record.elapsed:.3f}s")
        return list(results)

    def map_sync(self, fn: Callable[[Any], Any], items: Iterable[Any],
                 batch_id: str = 'batch') -> List[Any]:
        """Blocking variant of map; same ordering and exception handling."""
        items = list(items)
        record = self._start(batch_id, len(items))
        executor = self._ensure_executor()
        futures = [executor.submit(fn, item) for item in items]
        results: List[Any] = []
        for future in futures:
            try:
                results.append(future.result())
            except Exception as e:
                results.append(e)

        self._finish(record, results)
        return results

    def close(self):
        """Shut the worker threads down."""
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None

    def __enter__(self) -> 'EvaluationPool':
        return self

    def __exit__(self, *exc):
        self.close()

    def get_status(self) -> Dict[str, Any]:
        """Get pool status information.

        Returns:
            Status dictionary
        """
        return {
            'threads': self.threads,
            'running': self.executor is not None,
            'batch_count': self.batch_count,
            'items_evaluated': self.items_evaluated,
            'failures': self.failures,
            'last_batch': None if self.last_batch is None else {
                'id': self.last_batch.id,
                'size': self.last_batch.size,
                'elapsed': self.last_batch.elapsed,
            },
        }
