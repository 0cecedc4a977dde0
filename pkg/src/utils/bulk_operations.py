"""Concurrent execution of independent experiment cells.

Each cell (one regime of the ablation, one episode batch of the autonomy
study) runs single-threaded in a worker thread; cells run side by side up to
a concurrency limit. Results come back in submission order whatever the
completion order, so downstream report assembly stays deterministic.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class CellRunResult:
    """Summary of a batch of cells.

    Attributes:
        total: Number of cells submitted
        succeeded: Cells that returned a value
        failed: Cells that raised
        errors: "<label>: <message>" per failed cell
        results: Return values of the successful cells, in submission order
        exceptions: Exceptions of the failed cells, in submission order
        duration: Wall-clock time of the whole batch in seconds
    """

    total: int
    succeeded: int
    failed: int
    errors: List[str]
    results: List[Any] = field(default_factory=list)
    exceptions: List[BaseException] = field(default_factory=list, repr=False)
    duration: float = 0.0

    def success_rate(self) -> float:
        """Success rate as a percentage between 0.0 and 100.0."""
        if self.total == 0:
            return 0.0
        return (self.succeeded / self.total) * 100.0


async def run_cells(
    fn: Callable[..., T],
    cells: Sequence[Dict[str, Any]],
    max_concurrent: int = 4,
    labels: Sequence[str] = (),
) -> CellRunResult:
    """Run fn(**cell) for every cell in worker threads.

    Args:
        fn: Blocking cell function
        cells: Keyword arguments of each call
        max_concurrent: Maximum cells in flight
        labels: Names used in error messages (defaults to the cell index)

    Returns:
        CellRunResult; exceptions are captured per cell, never raised

    Raises:
        ValueError: If cells is empty or max_concurrent is not positive
    """
    if not cells:
        raise ValueError("cells cannot be empty")
    if max_concurrent <= 0:
        raise ValueError(f"max_concurrent must be positive, got {max_concurrent}")
    start_time = time.time()
    semaphore = asyncio.Semaphore(max_concurrent)
    names = list(labels) or [f"cell {i}" for i in range(len(cells))]

    async def run_one(cell: Dict[str, Any]) -> T:
        async with semaphore:
            return await asyncio.to_thread(fn, **cell)

    outcomes = await asyncio.gather(*(run_one(cell) for cell in cells), return_exceptions=True)

    results, errors, exceptions = [], [], []
    for name, outcome in zip(names, outcomes):
        if isinstance(outcome, BaseException):
            logger.error(f"❌ {name} failed: {outcome}")
            errors.append(f"{name}: {outcome}")
            exceptions.append(outcome)
        else:
            results.append(outcome)
    return CellRunResult(
        total=len(cells),
        succeeded=len(results),
        failed=len(errors),
        errors=errors,
        results=results,
        exceptions=exceptions,
        duration=time.time() - start_time,
    )


def run_cells_blocking(
    fn: Callable[..., T],
    cells: Sequence[Dict[str, Any]],
    max_concurrent: int = 4,
    labels: Sequence[str] = (),
) -> List[T]:
    """Run cells from synchronous code and return their values in order.

    Raises:
        The first cell's exception when any cell failed, so callers see the
        same error types as a sequential run
    """
    if max_concurrent == 1:
        return [fn(**cell) for cell in cells]

    summary = asyncio.run(run_cells(fn, cells, max_concurrent, labels))
    if summary.failed:
        raise summary.exceptions[0]
    return summary.results
