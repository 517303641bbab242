"""Goodput accumulation and its IPA gradient.

G_n = integral of alpha_n minus twice the volume node n retransmits while
in timeout, where the retransmitted rate is alpha_n(t - theta_n). The
gradient is the Leibniz derivative of that decomposition: a jump term at
every event, boundary terms where a timeout interval starts or ends, and
two integral terms per interval.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from sfmipa.core.ipa import integrate_delayed_alpha_derivative
from sfmipa.core.signals import PiecewiseSignal
from sfmipa.exceptions import EstimationError
from sfmipa.models.records import EventRecord, PathResult
from sfmipa.models.reports import GradientEstimate

logger = logging.getLogger(__name__)

# Goodput counts every retransmitted unit twice: once as wasted capacity and
# once as the lost original.
RETRANSMISSION_WEIGHT = 2.0


@dataclass
class GoodputAccumulator:
    """Running goodput of one path.

    Attributes:
        goodput_by_node: G_n.
        grad: dG_n/dtheta_j.
        omega: Per node, the indices k of intervals [tau_k, tau_k+1) spent in timeout.
    """
    goodput_by_node: np.ndarray
    grad: np.ndarray
    omega: List[List[int]] = field(default_factory=list)

    @classmethod
    def empty(cls, n_nodes: int) -> "GoodputAccumulator":
        return cls(np.zeros(n_nodes), np.zeros((n_nodes, n_nodes)), [[] for _ in range(n_nodes)])

    @property
    def goodput(self) -> float:
        return float(np.sum(self.goodput_by_node))


def accumulate_interval(
    acc: GoodputAccumulator,
    k: int,
    lo: float,
    hi: float,
    top: Sequence[bool],
    thetas: Sequence[float],
    alpha_hist: Sequence[PiecewiseSignal],
    alpha_prime: np.ndarray,
    alpha_prime_hist: Sequence[Sequence[PiecewiseSignal]],
    snap_tol: float = 0.0,
) -> GoodputAccumulator:
    """Add the contribution of the inter-event interval ``[lo, hi]``.

    Args:
        acc: Accumulator to update in place.
        k: Index of the event opening the interval.
        lo: Interval start.
        hi: Interval end.
        top: Timeout flags of every node on the interval.
        thetas: Timeout thresholds.
        alpha_hist: Rate histories covering ``[lo - theta_n, hi]``.
        alpha_prime: dalpha/dtheta on the interval (constant).
        alpha_prime_hist: Derivative histories covering ``[lo - theta_n, hi - theta_n]``.
        snap_tol: Delayed window ends within this distance of a rate
            breakpoint are moved onto it (see ``PiecewiseSignal.snap``).

    Returns:
        The same accumulator.
    """
    width = hi - lo
    n_nodes = len(thetas)
    for n in range(n_nodes):
        acc.goodput_by_node[n] += alpha_hist[n].integrate(lo, hi)
        acc.grad[n, :] += alpha_prime[n, :] * width
        if not top[n]:
            continue
        theta = thetas[n]
        acc.omega[n].append(k)
        a = alpha_hist[n].snap(lo - theta, snap_tol)
        b = max(a, alpha_hist[n].snap(hi - theta, snap_tol))
        acc.goodput_by_node[n] -= RETRANSMISSION_WEIGHT * alpha_hist[n].integrate(a, b)
        for j in range(n_nodes):
            acc.grad[n, j] -= RETRANSMISSION_WEIGHT * integrate_delayed_alpha_derivative(
                lo, hi, theta, alpha_prime_hist[n][j], alpha_hist[n], same_node=(j == n), snap_tol=snap_tol
            )
    return acc


def accumulate_event_terms(
    acc: GoodputAccumulator,
    ev: EventRecord,
    tau_prime: np.ndarray,
    alpha_left: np.ndarray,
    alpha_right: np.ndarray,
    delayed_left: np.ndarray,
    delayed_right: np.ndarray,
    top_before: Sequence[bool],
    top_after: Sequence[bool],
) -> GoodputAccumulator:
    """Add the boundary contributions of one event.

    ``delayed_left``/``delayed_right`` are alpha_n((tau - theta_n)-) and
    alpha_n((tau - theta_n)+). A timeout interval ending at the event adds
    -2 tau' alpha_n((tau - theta_n)-); one starting there adds
    +2 tau' alpha_n((tau - theta_n)+).
    """
    if not np.any(tau_prime):
        return acc
    for n in range(len(alpha_left)):
        jump = alpha_left[n] - alpha_right[n]
        if jump != 0.0:
            acc.grad[n, :] += jump * tau_prime
        if top_before[n]:
            acc.grad[n, :] -= RETRANSMISSION_WEIGHT * delayed_left[n] * tau_prime
        if top_after[n]:
            acc.grad[n, :] += RETRANSMISSION_WEIGHT * delayed_right[n] * tau_prime
    return acc


def finalize(acc: GoodputAccumulator) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(G, G_n, grad, total_grad)`` with total_grad_j = sum_n grad[n, j]."""
    return (
        acc.goodput,
        acc.goodput_by_node.copy(),
        acc.grad.copy(),
        acc.grad.sum(axis=0),
    )


def _mean_stderr(rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = rows.mean(axis=0)
    if rows.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, rows.std(axis=0, ddof=1) / math.sqrt(rows.shape[0])


def summarize_paths(results: Sequence[PathResult], mode: str = "global") -> GradientEstimate:
    """Average per-path results into a gradient estimate.

    Degenerate paths are excluded and counted.

    Raises:
        EstimationError: If no path is usable.
    """
    if not results:
        raise EstimationError("no sample paths to summarize")
    usable = [r for r in results if not r.degenerate]
    n_degenerate = len(results) - len(usable)
    if not usable:
        raise EstimationError(f"all {len(results)} sample paths are degenerate")
    if n_degenerate:
        logger.warning("%d of %d paths degenerate and excluded", n_degenerate, len(results))

    goodput_mean, goodput_stderr = _mean_stderr(np.array([[r.goodput] for r in usable]))
    by_node_mean, _ = _mean_stderr(np.array([r.goodput_by_node for r in usable]))
    if mode == "local":
        grads = np.array([r.local_grad for r in usable])
    else:
        grads = np.array([r.total_grad for r in usable])
    grad_mean, grad_stderr = _mean_stderr(grads)
    return GradientEstimate(
        mode=mode,
        goodput_mean=float(goodput_mean[0]),
        goodput_stderr=float(goodput_stderr[0]),
        goodput_by_node=by_node_mean,
        grad=grad_mean,
        grad_stderr=grad_stderr,
        n_paths=len(usable),
        n_degenerate=n_degenerate,
    )
