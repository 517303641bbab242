"""Common-random-numbers finite differences as an independent check of IPA."""

import functools
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sfmipa.core.runner import map_paths
from sfmipa.core.simulator import run_path
from sfmipa.exceptions import EstimationError, SimulationError
from sfmipa.models.records import EventKind, EventRecord, Trajectory
from sfmipa.models.reports import OracleReport, OracleRow
from sfmipa.models.scenario import Scenario

logger = logging.getLogger(__name__)

DEFAULT_TOL_REL = 2e-2
DELTA_SCALE = 1e-4


def default_delta(theta: float) -> float:
    return DELTA_SCALE * max(theta, 1.0)


def _exogenous_log(traj: Trajectory) -> List[Tuple[float, str, Optional[int]]]:
    return [(ev.tau, ev.kind.value, ev.node) for ev in traj.events if ev.kind.is_exogenous]


def order_stable(nominal: Trajectory, perturbed: Trajectory) -> bool:
    """Both paths visit the same (kind, node) sequence, times ignored."""
    return [ev.signature() for ev in nominal.events] == [ev.signature() for ev in perturbed.events]


def perturbed_pair(
    s: Scenario, seed: int, j: int, delta: float, nominal: Optional[Trajectory] = None
) -> Tuple[Trajectory, Trajectory]:
    """Nominal and ``theta + delta * e_j`` paths driven by the same realizations.

    A nominal trajectory already run for ``seed`` can be passed in.

    Raises:
        EstimationError: If the perturbed threshold would be negative.
        SimulationError: If the two runs did not see the same exogenous jumps.
    """
    if not 0 <= j < s.n_nodes:
        raise EstimationError(f"node index {j + 1} out of range 1..{s.n_nodes}")
    if not delta > 0.0 or s.thetas[j] + delta < 0.0:
        raise EstimationError(f"invalid finite-difference step {delta!r} for theta_{j + 1}")
    if nominal is None:
        nominal = run_path(s, seed)
    perturbed = run_path(s.with_theta(j, s.thetas[j] + delta), seed)
    if _exogenous_log(nominal) != _exogenous_log(perturbed):
        raise SimulationError(f"seed {seed}: perturbed run saw different exogenous jumps")
    return nominal, perturbed


def fd_gradient(s: Scenario, seed: int, j: int, delta: Optional[float] = None) -> Tuple[float, bool]:
    """Forward difference of G in theta_j.

    Returns:
        ``(dG, order_stable)``; ``order_stable`` is False when the perturbed
        path visits a different event sequence.
    """
    delta = default_delta(s.thetas[j]) if delta is None else delta
    nominal, perturbed = perturbed_pair(s, seed, j, delta)
    fd = (perturbed.result.goodput - nominal.result.goodput) / delta
    return fd, order_stable(nominal, perturbed)


def fd_event_times(
    nominal: Trajectory, perturbed: Trajectory, j: int, delta: float
) -> List[Tuple[EventRecord, float]]:
    """Pair every endogenous or induced nominal event with its FD time derivative.

    Only defined for order-stable pairs; an empty list is returned otherwise.
    """
    if not order_stable(nominal, perturbed):
        return []
    matched = []
    for ev, ev_pert in zip(nominal.events, perturbed.events):
        if ev.kind in (EventKind.START, EventKind.END) or ev.kind.is_exogenous:
            continue
        matched.append((ev, (ev_pert.tau - ev.tau) / delta))
    return matched


def relative_error(ipa: float, fd: float, goodput: float) -> float:
    floor = 1e-6 * (1.0 + abs(goodput))
    return abs(ipa - fd) / max(abs(fd), floor)


def _oracle_rows(s: Scenario, seed: int, deltas: Tuple[float, ...]) -> List[OracleRow]:
    rows = []
    base = run_path(s, seed)
    for j, delta in enumerate(deltas):
        nominal, perturbed = perturbed_pair(s, seed, j, delta, nominal=base)
        ipa = float(nominal.result.total_grad[j])
        fd = (perturbed.result.goodput - nominal.result.goodput) / delta
        stable = order_stable(nominal, perturbed)
        degenerate = nominal.result.degenerate or perturbed.result.degenerate

        within = 0
        events = [] if degenerate else fd_event_times(nominal, perturbed, j, delta)
        tol = max(1e-3, 10.0 * delta)
        for ev, fd_tau in events:
            tau_prime = ev.tau_prime[j]
            if abs(fd_tau - tau_prime) <= tol * max(abs(tau_prime), 1.0):
                within += 1
            else:
                logger.debug("seed %d: event %d (%s) tau'=%.6g fd=%.6g", seed, ev.k, ev.kind.value, tau_prime, fd_tau)

        rel = math.nan if degenerate else relative_error(ipa, fd, nominal.result.goodput)
        if not stable:
            logger.warning("seed %d: event order changed under theta_%d + %.3g", seed, j + 1, delta)
        rows.append(OracleRow(
            seed=seed,
            j=j,
            ipa=ipa,
            fd=fd,
            rel_error=rel,
            order_stable=stable,
            degenerate=degenerate,
            events_matched=len(events),
            events_within_tol=within,
        ))
    return rows


def compare_ipa_fd(
    s: Scenario,
    seeds: Sequence[int],
    delta: Optional[float] = None,
    tol_rel: float = DEFAULT_TOL_REL,
    jobs: Optional[int] = 1,
) -> OracleReport:
    """IPA total gradients against forward differences for every seed and threshold.

    Args:
        s: Scenario.
        seeds: Seeds to run; each gives one row per threshold.
        delta: Absolute step for every threshold; per-threshold default if None.
        tol_rel: Relative error accepted on order-stable, non-degenerate paths.
        jobs: Worker processes.

    Returns:
        The report; ``report.passed`` carries the verdict.

    Raises:
        EstimationError: If ``seeds`` is empty.
    """
    seeds = list(seeds)
    if not seeds:
        raise EstimationError("finite-difference check needs at least one seed")
    if delta is None:
        deltas = tuple(default_delta(theta) for theta in s.thetas)
    else:
        deltas = tuple(float(delta) for _ in s.thetas)

    per_seed = map_paths(functools.partial(_oracle_rows, deltas=deltas), s, seeds, jobs)
    report = OracleReport(rows=[row for rows in per_seed for row in rows], tol_rel=tol_rel)
    logger.info(
        "FD check: %d rows, %.0f%% order-stable, max rel. error %.3e, %s",
        len(report.rows),
        100.0 * report.stable_fraction,
        report.max_rel_error,
        "pass" if report.passed else "fail",
    )
    return report


def richardson_sequence(s: Scenario, seed: int, j: int, delta: float, halvings: int = 2) -> np.ndarray:
    """FD values at delta, delta/2, ... for studying convergence toward IPA."""
    return np.array([fd_gradient(s, seed, j, delta / 2 ** h)[0] for h in range(halvings + 1)])
