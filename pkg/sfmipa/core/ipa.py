"""Infinitesimal Perturbation Analysis along a sample path.

Tracks dalpha_n/dtheta_j (an N x N matrix, piecewise constant in time) and
dx/dtheta_j (a vector, piecewise linear), computes the derivative of every
event time, applies the derivative jumps at events and keeps histories so
the delayed quantities at t - w(t) and t - theta_n can be looked up.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from sfmipa.core.signals import HistoryWindow, PiecewiseSignal
from sfmipa.exceptions import DegenerateEventError, ModelViolationError
from sfmipa.models.records import EventKind, EventRecord

logger = logging.getLogger(__name__)

# Relative size (against B) below which an event-time denominator vanishes.
DENOMINATOR_TOL = 1e-12


@dataclass
class IpaState:
    """Derivative state: ``alpha_prime[n, j]`` and ``x_prime[j]``."""
    alpha_prime: np.ndarray
    x_prime: np.ndarray

    @classmethod
    def zeros(cls, n_nodes: int) -> "IpaState":
        return cls(np.zeros((n_nodes, n_nodes)), np.zeros(n_nodes))

    def copy(self) -> "IpaState":
        return IpaState(self.alpha_prime.copy(), self.x_prime.copy())


@dataclass
class EventDerivative:
    """Event-time derivative with respect to every threshold."""
    tau_prime: np.ndarray


@dataclass
class EventContext:
    """Left-limit quantities at an event time.

    Attributes:
        alpha_total: Sum of rates just before the event.
        ramp_total: Time derivative of that sum (ramping nodes only).
        capacity: B just before the event.
        alpha_tilde: Total availability rate at the head of the channel.
        x_prime: dx/dtheta just before the event.
        x_tilde_prime: dx/dtheta at the arrival time of the head fluid.
        alpha_prime_total: Column sums of dalpha/dtheta.
        trigger_tau_prime: tau' of the triggering event (induced events).
        trigger_x_prime: dx/dtheta just before the triggering event.
        trigger_alpha_total: Sum of rates just before the triggering event.
    """
    alpha_total: float
    ramp_total: float
    capacity: float
    alpha_tilde: float
    x_prime: np.ndarray
    x_tilde_prime: np.ndarray
    alpha_prime_total: np.ndarray
    trigger_tau_prime: Optional[np.ndarray] = None
    trigger_x_prime: Optional[np.ndarray] = None
    trigger_alpha_total: Optional[float] = None


def waiting_time_derivative(x_prime_delayed: np.ndarray, alpha_tilde_total: float) -> np.ndarray:
    """dw/dtheta_j = dx(t - w)/dtheta_j / alpha_tilde.

    Raises:
        ModelViolationError: If the availability rate is not positive.
    """
    if not alpha_tilde_total > 0.0:
        raise ModelViolationError(f"availability rate must be positive, got {alpha_tilde_total!r}")
    return np.asarray(x_prime_delayed, dtype=float) / alpha_tilde_total


def _checked(denominator: float, capacity: float, what: str) -> float:
    if abs(denominator) < DENOMINATOR_TOL * max(capacity, 1.0):
        raise DegenerateEventError(f"{what}: denominator {denominator!r} vanishes")
    return denominator


def event_time_derivative(ev: EventRecord, ctx: EventContext, n_nodes: int) -> EventDerivative:
    """Derivative of one event time with respect to every threshold.

    Args:
        ev: The event (kind and node are used).
        ctx: Left-limit quantities at the event.
        n_nodes: Number of thresholds.

    Returns:
        The event derivative; exogenous events and sentinels give zeros.

    Raises:
        DegenerateEventError: If the defining denominator vanishes.
    """
    kind = ev.kind
    if kind in (EventKind.START, EventKind.END) or kind.is_exogenous:
        return EventDerivative(np.zeros(n_nodes))

    if kind is EventKind.BUFFER_FILL:
        denom = _checked(ctx.ramp_total, ctx.capacity, "[x>0]")
        return EventDerivative(-ctx.alpha_prime_total / denom)

    if kind is EventKind.BUFFER_EMPTY:
        denom = _checked(ctx.alpha_total - ctx.capacity, ctx.capacity, "[x=0]")
        return EventDerivative(-ctx.x_prime / denom)

    if kind in (EventKind.TIMEOUT_START, EventKind.TIMEOUT_END):
        denom = _checked(ctx.alpha_tilde - ctx.capacity, ctx.capacity, f"[{kind.value}] node {ev.node}")
        numer = -ctx.x_tilde_prime.copy()
        numer[ev.node] += ctx.alpha_tilde
        return EventDerivative(numer / denom)

    if ctx.trigger_tau_prime is None:
        raise ModelViolationError(f"induced event {ev.k} has no trigger data")

    if kind is EventKind.AVAILABILITY_JUMP:
        denom = _checked(ctx.capacity, ctx.capacity, "[alpha_tilde jump]")
        return EventDerivative(
            (ctx.trigger_x_prime + ctx.trigger_tau_prime * ctx.trigger_alpha_total) / denom
        )

    tau_prime = ctx.trigger_tau_prime.copy()
    tau_prime[ev.node] += 1.0
    return EventDerivative(tau_prime)


def apply_state_jump(
    ev: EventRecord,
    ipa: IpaState,
    tau_prime: EventDerivative,
    jump: float,
    ramp_rate: float = 0.0,
) -> IpaState:
    """Right-limit derivative state after an event.

    Args:
        ev: The event.
        ipa: Left-limit derivative state.
        tau_prime: Derivative of the event time.
        jump: alpha_n(tau-) - alpha_n,min for [w>theta_n]; ignored otherwise.
        ramp_rate: r_n of the node re-entering its ramp at [w<=theta_n].

    Returns:
        A new IpaState.
    """
    out = ipa.copy()
    if ev.kind is EventKind.TIMEOUT_START:
        out.alpha_prime[ev.node, :] = 0.0
        out.x_prime = out.x_prime + jump * tau_prime.tau_prime
    elif ev.kind is EventKind.TIMEOUT_END:
        out.alpha_prime[ev.node, :] -= ramp_rate * tau_prime.tau_prime
    elif ev.kind is EventKind.BUFFER_EMPTY:
        out.x_prime[:] = 0.0
    return out


def flow_derivatives(alpha_prime: np.ndarray, nep: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Time derivatives of ``(alpha_prime, x_prime)`` between events."""
    d_alpha = np.zeros_like(alpha_prime)
    if not nep:
        return d_alpha, np.zeros(alpha_prime.shape[1])
    return d_alpha, alpha_prime.sum(axis=0)


def delayed_alpha_derivative(
    t: float,
    theta_n: float,
    alpha_prime_history: PiecewiseSignal,
    alpha_history: PiecewiseSignal,
    same_node: bool,
) -> float:
    """d alpha_n(t - theta_n) / d theta_j at a single time (right-continuous)."""
    value = alpha_prime_history.eval(t - theta_n)
    if same_node:
        value -= alpha_history.slope(t - theta_n)
    return value


def integrate_delayed_alpha_derivative(
    lo: float,
    hi: float,
    theta_n: float,
    alpha_prime_history: PiecewiseSignal,
    alpha_history: PiecewiseSignal,
    same_node: bool,
    snap_tol: float = 0.0,
) -> float:
    """Integral over ``[lo, hi]`` of d alpha_n(t - theta_n) / d theta_j.

    Besides the stored sensitivity of alpha_n, shifting the lookup point
    by theta_n contributes minus the change of alpha_n across the shifted
    window when ``j == n``. Jumps that move with the thresholds are event
    boundaries, so any jump inside the window (the prehistory switch at
    t = 0) is fixed and counts in that change. Window ends within
    ``snap_tol`` of a rate breakpoint are moved onto it.
    """
    if hi <= lo:
        return 0.0
    a = alpha_history.snap(lo - theta_n, snap_tol)
    b = max(a, alpha_history.snap(hi - theta_n, snap_tol))
    value = alpha_prime_history.integrate(a, b)
    if same_node:
        value -= alpha_history.eval_left(b) - alpha_history.eval(a)
    return value


class IpaTracker:
    """Owns the derivative state of one path and its histories."""

    def __init__(self, n_nodes: int, t_lo: float, retention: float, margin: float):
        self.n_nodes = n_nodes
        self.state = IpaState.zeros(n_nodes)
        self.alpha_prime_hist: List[List[HistoryWindow]] = [
            [
                HistoryWindow(PiecewiseSignal.constant(0.0, t_lo, 0.0, f"dalpha_{n + 1}_{j + 1}"), retention, margin)
                for j in range(n_nodes)
            ]
            for n in range(n_nodes)
        ]
        self.x_prime_hist: List[HistoryWindow] = [
            HistoryWindow(PiecewiseSignal.constant(0.0, t_lo, 0.0, f"dx_{j + 1}"), retention, margin)
            for j in range(n_nodes)
        ]
        self.degenerate = False
        self.note = ""
        self._triggers: Dict[int, Tuple[np.ndarray, np.ndarray, float]] = {}

    def windows(self) -> List[HistoryWindow]:
        return [w for row in self.alpha_prime_hist for w in row] + list(self.x_prime_hist)

    def extend(self, t0: float, t1: float, nep: bool) -> None:
        """Record the derivative flows on ``[t0, t1]``."""
        _, dx = flow_derivatives(self.state.alpha_prime, nep)
        for n in range(self.n_nodes):
            for j in range(self.n_nodes):
                self.alpha_prime_hist[n][j].signal.append(t1, self.state.alpha_prime[n, j])
        for j in range(self.n_nodes):
            self.x_prime_hist[j].signal.append(t1, self.state.x_prime[j], dx[j])
        self.state.x_prime = self.state.x_prime + dx * (t1 - t0)

    def x_prime_at(self, t: float) -> np.ndarray:
        """Left limit of dx/dtheta at a past time."""
        return np.array([h.signal.eval_left(t) for h in self.x_prime_hist])

    def remember_trigger(self, k: int, tau_prime: np.ndarray, x_prime_left: np.ndarray, alpha_total_left: float) -> None:
        self._triggers[k] = (tau_prime.copy(), x_prime_left.copy(), alpha_total_left)

    def trigger(self, k: int) -> Tuple[np.ndarray, np.ndarray, float]:
        return self._triggers[k]

    def forget_trigger(self, k: int) -> None:
        self._triggers.pop(k, None)

    def event_derivative(self, ev: EventRecord, ctx: EventContext) -> np.ndarray:
        """tau' of ``ev``; NaN once the path has turned degenerate."""
        if self.degenerate:
            return np.full(self.n_nodes, np.nan)
        try:
            return event_time_derivative(ev, ctx, self.n_nodes).tau_prime
        except DegenerateEventError as e:
            self.degenerate = True
            self.note = f"event {ev.k} at t={ev.tau:.12g}: {e}"
            logger.warning("Degenerate path, gradient discarded: %s", self.note)
            return np.full(self.n_nodes, np.nan)

    def jump(self, ev: EventRecord, tau_prime: np.ndarray, delta_alpha: float, ramp_rate: float) -> None:
        self.state = apply_state_jump(ev, self.state, EventDerivative(tau_prime), delta_alpha, ramp_rate)
