"""Projected stochastic gradient ascent on the timeout thresholds."""

import logging
from typing import List, Optional, Sequence

import numpy as np

from sfmipa.core.goodput import summarize_paths
from sfmipa.core.runner import map_paths
from sfmipa.core.simulator import path_result
from sfmipa.exceptions import EstimationError
from sfmipa.models.reports import GradientEstimate, IterateRecord, OptimizationResult, SweepPoint
from sfmipa.models.scenario import OPTIMIZER_MODES, OptimizerConfig, Scenario

logger = logging.getLogger(__name__)

SEED_SPACE = 2 ** 31 - 1

# At theta_n = 0 the timeout start of node n coincides with every buffer
# fill and its time derivative is unbounded. The one-sided derivative there
# is taken at this distance inside the feasible set.
BOUNDARY_OFFSET = 1e-4


def interior_thetas(thetas: Sequence[float]) -> np.ndarray:
    """``thetas`` with every threshold sitting on 0 moved to ``BOUNDARY_OFFSET``."""
    thetas = np.array(thetas, dtype=float)
    return np.where(thetas <= 0.0, BOUNDARY_OFFSET, thetas)


def gradient_estimate(
    s: Scenario, seeds: Sequence[int], mode: str = "global", jobs: Optional[int] = 1
) -> GradientEstimate:
    """Mean IPA gradient over ``seeds``.

    In ``global`` mode component j is the mean of dG/dtheta_j; in ``local``
    mode it is the mean of dG_j/dtheta_j, the only term node j can observe.
    Thresholds equal to 0 get the right derivative, estimated at
    ``BOUNDARY_OFFSET``.

    Raises:
        EstimationError: On an unknown mode, no seeds, or only degenerate paths.
    """
    if mode not in OPTIMIZER_MODES:
        raise EstimationError(f"unknown gradient mode '{mode}' (expected one of {', '.join(OPTIMIZER_MODES)})")
    seeds = list(seeds)
    if not seeds:
        raise EstimationError("gradient estimate needs at least one seed")
    inside = interior_thetas(s.thetas)
    if not np.array_equal(inside, np.asarray(s.thetas, dtype=float)):
        logger.debug("Boundary thresholds evaluated at %s", np.array2string(inside, precision=6))
        s = s.with_thetas(inside)
    return summarize_paths(map_paths(path_result, s, seeds, jobs), mode)


def project(thetas: np.ndarray) -> np.ndarray:
    return np.maximum(thetas, 0.0)


def optimize(s: Scenario, cfg: Optional[OptimizerConfig] = None, jobs: Optional[int] = 1) -> OptimizationResult:
    """Run the ascent theta <- max(0, theta + eta_i * g_i) from ``s.thetas``.

    Every iteration draws ``cfg.paths_per_iteration`` fresh seeds from a
    generator seeded with ``cfg.master_seed``, so the history is a function
    of the scenario and the config alone.

    Args:
        s: Scenario holding the starting thresholds.
        cfg: Ascent settings; ``s.optimizer`` if omitted.
        jobs: Worker processes for the paths of one iteration.

    Returns:
        The iterate history; the last record is the final iterate.
    """
    cfg = cfg or s.optimizer
    if cfg.paths_per_iteration < 1 or cfg.max_iterations < 1 or not cfg.step_size > 0.0:
        raise EstimationError("optimizer needs paths_per_iteration, max_iterations and step_size > 0")

    master = np.random.default_rng(cfg.master_seed)
    thetas = project(np.array(s.thetas, dtype=float))
    history: List[IterateRecord] = []

    for i in range(cfg.max_iterations):
        seeds = master.integers(0, SEED_SPACE, size=cfg.paths_per_iteration).tolist()
        est = gradient_estimate(s.with_thetas(thetas), seeds, cfg.mode, jobs)
        step = cfg.step(i)
        record = IterateRecord(
            iteration=i,
            thetas=thetas.copy(),
            goodput_mean=est.goodput_mean,
            goodput_stderr=est.goodput_stderr,
            grad=est.grad,
            grad_stderr=est.grad_stderr,
            step=step,
            n_degenerate=est.n_degenerate,
        )
        history.append(record)
        logger.info(
            "iter %d: theta=%s G=%.6g |g|=%.3e", i, np.array2string(thetas, precision=4), est.goodput_mean, record.grad_norm
        )
        if record.grad_norm < cfg.stop_grad_norm:
            return OptimizationResult(history, converged=True, reason=f"gradient norm below {cfg.stop_grad_norm:g}")
        thetas = project(thetas + step * est.grad)

    return OptimizationResult(history, converged=False, reason=f"reached {cfg.max_iterations} iterations")


def threshold_grid(s: Scenario, values: Sequence[float], node: Optional[int] = None) -> List[np.ndarray]:
    """Threshold vectors for a sweep.

    With ``node`` (0-based) only that threshold varies; otherwise every node
    takes the swept value.
    """
    points = []
    for v in values:
        if v < 0.0:
            raise EstimationError(f"sweep value {v!r} is negative")
        if node is None:
            points.append(np.full(s.n_nodes, float(v)))
        else:
            if not 0 <= node < s.n_nodes:
                raise EstimationError(f"node {node + 1} out of range 1..{s.n_nodes}")
            thetas = np.array(s.thetas, dtype=float)
            thetas[node] = v
            points.append(thetas)
    return points


def sweep_thresholds(
    s: Scenario, grid: Sequence[Sequence[float]], seeds: Sequence[int], jobs: Optional[int] = 1
) -> List[SweepPoint]:
    """Mean goodput and gradient at every threshold vector of ``grid``, same seeds throughout."""
    if not grid:
        raise EstimationError("empty sweep grid")
    points = []
    for thetas in grid:
        est = gradient_estimate(s.with_thetas(thetas), seeds, "global", jobs)
        points.append(SweepPoint(
            thetas=np.array(thetas, dtype=float),
            goodput_mean=est.goodput_mean,
            goodput_stderr=est.goodput_stderr,
            grad=est.grad,
            n_degenerate=est.n_degenerate,
        ))
        logger.info("sweep theta=%s G=%.6g", np.array2string(points[-1].thetas, precision=4), est.goodput_mean)
    return points
