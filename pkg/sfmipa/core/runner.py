"""Fan-out of independent sample paths over worker processes."""

import concurrent.futures
import logging
import os
from typing import Callable, List, Optional, Sequence, TypeVar

from sfmipa.models.scenario import Scenario

logger = logging.getLogger(__name__)

T = TypeVar("T")

PathFn = Callable[[Scenario, int], T]


def resolve_jobs(jobs: Optional[int]) -> int:
    """Worker count; ``0`` or ``None`` means one per CPU."""
    if not jobs:
        return os.cpu_count() or 1
    return max(1, int(jobs))


def map_paths(fn: PathFn, scenario: Scenario, seeds: Sequence[int], jobs: Optional[int] = 1) -> List[T]:
    """Run ``fn(scenario, seed)`` for every seed.

    Results come back in seed order whatever the worker count, so the
    output of a run does not depend on ``jobs``. ``fn`` must be a
    module-level function for the process pool to pickle it.
    """
    seeds = list(seeds)
    workers = min(resolve_jobs(jobs), len(seeds)) if seeds else 1
    if workers <= 1:
        return [fn(scenario, seed) for seed in seeds]

    logger.debug("Running %d paths on %d workers", len(seeds), workers)
    chunksize = max(1, len(seeds) // (4 * workers))
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, [scenario] * len(seeds), seeds, chunksize=chunksize))
