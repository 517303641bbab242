"""Event-driven simulation of the timeout-controlled stochastic flow model.

N transmitters with infinite supply feed one lossless FCFS channel of
capacity B(t). Node n ramps its rate alpha_n at r_n while the common
waiting time w stays within its threshold theta_n (NP_n), drops to
alpha_n,min when w exceeds theta_n and holds it during the timeout period
(TOP_n), while retransmitting alpha_n(t - theta_n).

The waiting time is not stepped numerically. With cumulative arrivals
A(t) (piecewise quadratic) and the head index L(t) (equal to A during an
empty period, growing at rate B otherwise), FCFS gives A(t - w(t)) = L(t),
so w is obtained exactly by inverting A, and every guard function is a
piecewise quadratic with closed-form roots.
"""

import logging
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sfmipa.core import goodput as gp
from sfmipa.core.ipa import EventContext, IpaTracker
from sfmipa.core.scenario import realize_processes
from sfmipa.core.signals import HistoryWindow, PiecewiseSignal, first_crossing
from sfmipa.exceptions import ModelViolationError, SimulationError
from sfmipa.models.records import (
    EventKind,
    EventRecord,
    PathHistories,
    PathResult,
    SystemState,
    TimerState,
    Trajectory,
)
from sfmipa.models.scenario import Scenario

logger = logging.getLogger(__name__)

GUARD_REL_TOL = 1e-12
MAX_EVENTS = 1_000_000
MAX_EVENTS_AT_ONE_TIME = 10_000


def service_shares(alpha_tilde: Sequence[float], capacity: float) -> np.ndarray:
    """FCFS service shares beta_n = B * alpha_tilde_n / sum(alpha_tilde).

    Raises:
        ModelViolationError: If every availability rate is zero.
    """
    alpha_tilde = np.asarray(alpha_tilde, dtype=float)
    total = float(np.sum(alpha_tilde))
    if not total > 0.0:
        raise ModelViolationError("service shares undefined: all availability rates are zero")
    return capacity * alpha_tilde / total


def utilization(alpha_tilde: Sequence[float], capacity: float) -> np.ndarray:
    """Share rho_n = beta_n / B of the channel used by each class."""
    return service_shares(alpha_tilde, capacity) / capacity


def flow_field(
    state: SystemState,
    lam: Sequence[float],
    capacity: float,
    ramp_rates: Sequence[float],
) -> Tuple[np.ndarray, float, float]:
    """Time derivatives ``(alpha_dot, x_dot, w_dot)`` of the state.

    Supply rates ``lam`` do not enter: with infinite supply every node always
    has fluid to send.

    Raises:
        SignalDomainError: If the head lookup t - w(t) is not retained.
    """
    alpha_dot = np.where(state.top, 0.0, np.asarray(ramp_rates, dtype=float))
    total = state.total_alpha
    if state.x > 0.0 or total > capacity:
        x_dot = total - capacity
    else:
        x_dot = 0.0
    w_dot = 0.0
    if state.x > 0.0:
        if state.histories is None:
            raise ModelViolationError("flow_field needs rate histories to evaluate the head rate")
        head = state.t - state.w
        alpha_tilde = sum(h.signal.eval(head) for h in state.histories.alpha)
        w_dot = 1.0 - capacity / alpha_tilde
    return alpha_dot, x_dot, w_dot


class PathSimulator:
    """Runs one sample path and accumulates its goodput and IPA gradient."""

    def __init__(self, s: Scenario, seed: int, keep_full: bool = True):
        self.s = s
        self.seed = seed
        self.keep_full = keep_full
        self.n = s.n_nodes
        self.horizon = s.horizon
        self.thetas = np.array(s.thetas, dtype=float)
        self.ramp = np.array(s.policy.ramp_rates, dtype=float)
        self.alpha_min = np.array(s.policy.alpha_min, dtype=float)
        self.eps = s.event_eps
        self.w0 = s.init.waiting_time

        self.lambda_paths, self.b_path = realize_processes(s, seed)
        self._exo = self._exogenous_schedule()
        self._exo_idx = 0

        margin = s.settings.retention_margin
        look_back = max(self.w0, s.theta_max)
        self.t_lo = -((1.0 + margin) * look_back + 1e-6 * max(self.horizon, 1.0))
        retention = (1.0 + margin) * (self.w0 + s.theta_max) + 1e-6 * max(self.horizon, 1.0)
        self.w_max = self.w0

        pre = np.array(s.init.prehistory, dtype=float)
        pre_total = float(pre.sum())
        x0 = s.init.x0

        def window(name: str) -> HistoryWindow:
            return HistoryWindow(PiecewiseSignal(self.t_lo, name), retention, margin)

        hist = PathHistories(
            alpha=[window(f"alpha_{n + 1}") for n in range(self.n)],
            top=[window(f"top_{n + 1}") for n in range(self.n)],
            arrivals=window("arrivals"),
            level=window("level"),
            x=window("x"),
        )
        for n in range(self.n):
            hist.alpha[n].signal.append(0.0, pre[n])
            hist.top[n].signal.append(0.0, 0.0)
        hist.arrivals.signal.append(0.0, pre_total * self.t_lo, pre_total)
        hist.level.signal.append(0.0, pre_total * self.t_lo - x0, pre_total)
        hist.x.signal.append(0.0, x0)
        self.hist = hist

        top = np.array([self.w0 > th for th in self.thetas], dtype=bool)
        alpha = np.array(s.init.alpha0, dtype=float)
        alpha[top] = self.alpha_min[top]
        capacity = self.b_path.eval(0.0) if self.horizon > 0.0 else 0.0
        self.state = SystemState(
            t=0.0,
            alpha=alpha,
            x=x0,
            w=self.w0,
            arrivals=0.0,
            level=-x0,
            capacity=capacity,
            top=top,
            nep=bool(x0 > 0.0 or alpha.sum() > capacity),
            histories=hist,
        )
        self.timers: List[TimerState] = []
        self._pending_timer: Optional[TimerState] = None
        self._delayed_tau: Optional[float] = None
        self._delayed_last = np.zeros(self.n)
        self.events: List[EventRecord] = []
        self.ipa = IpaTracker(self.n, self.t_lo, retention, margin)
        self.acc = gp.GoodputAccumulator.empty(self.n)
        self._pre_total = pre_total

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def _exogenous_schedule(self) -> List[Tuple[float, EventKind, Optional[int]]]:
        jumps: List[Tuple[float, EventKind, Optional[int]]] = []
        for n, path in enumerate(self.lambda_paths):
            jumps.extend((t, EventKind.LAMBDA_JUMP, n) for t in path.breakpoints)
        jumps.extend((t, EventKind.B_JUMP, None) for t in self.b_path.breakpoints)
        jumps.sort(key=lambda j: (j[0], self.n if j[2] is None else j[2]))
        return jumps

    def _record(self, kind: EventKind, tau: float, node: Optional[int] = None, trigger: Optional[int] = None) -> EventRecord:
        ev = EventRecord(k=len(self.events), tau=tau, kind=kind, node=node, trigger=trigger,
                         tau_prime=np.zeros(self.n))
        self.events.append(ev)
        return ev

    def _start_timers(self, k: int, n: int) -> None:
        st = self.state
        self.timers.append(TimerState(trigger=k, kind="h1", node=n, started_at=st.t,
                                      target=st.arrivals, value=st.x))
        self.timers.append(TimerState(trigger=k, kind="h2", node=n, started_at=st.t,
                                      target=st.t + self.thetas[n], value=self.thetas[n]))

    def _initial_events(self) -> None:
        self._record(EventKind.START, 0.0)
        for n in np.flatnonzero(self.state.top):
            ev = self._record(EventKind.TIMEOUT_START, 0.0, node=int(n))
            self.ipa.remember_trigger(ev.k, ev.tau_prime, np.zeros(self.n), self._pre_total)
            self._start_timers(ev.k, int(n))
            logger.debug("Node %d starts in timeout (w0=%g > theta=%g)", n + 1, self.w0, self.thetas[n])

    # ------------------------------------------------------------------
    # Event location
    # ------------------------------------------------------------------

    def _tolerances(self) -> Tuple[float, float]:
        st = self.state
        value_tol = GUARD_REL_TOL * (1.0 + abs(st.arrivals) + abs(st.level))
        slope_tol = GUARD_REL_TOL * (1.0 + st.capacity + st.total_alpha)
        return value_tol, slope_tol

    def _ramp_total(self) -> float:
        return float(self.ramp[~self.state.top].sum())

    def _timeout_guard(self, n: int, t_cap: float, value_tol: float, slope_tol: float) -> Optional[float]:
        """First time in [t, t_cap] where w - theta_n changes sign in the watched direction.

        The guard is A(t - theta_n) - L(t), positive exactly when w > theta_n.
        """
        st = self.state
        theta = self.thetas[n]
        direction = -1 if st.top[n] else 1
        s_lo, s_hi = st.t - theta, t_cap - theta
        pieces = []
        if s_lo < st.t:
            pieces.extend(self.hist.arrivals.signal.segments(s_lo, min(s_hi, st.t)))
        if s_hi > st.t:
            pieces.append((st.t, s_hi, (st.arrivals, st.total_alpha, 0.5 * self._ramp_total())))
        for lo, hi, (a0, a1, a2) in pieces:
            t_piece = lo + theta
            level = st.level + st.capacity * (t_piece - st.t)
            u = first_crossing((a0 - level, a1 - st.capacity, a2), hi - lo, direction, value_tol, slope_tol)
            if u is not None:
                return t_piece + u
        return None

    def _candidates(self) -> List[Tuple[float, EventKind, Optional[int], Optional[TimerState]]]:
        st = self.state
        found = []
        t_cap = self.horizon
        if self._exo_idx < len(self._exo):
            t_e, kind, node = self._exo[self._exo_idx]
            found.append((t_e, kind, node, None))
            t_cap = min(t_cap, t_e)
        for timer in self.timers:
            if timer.kind == "h2":
                t_fire = max(timer.target, st.t)
            elif st.nep:
                t_fire = st.t + max(timer.target - st.level, 0.0) / st.capacity
            else:
                t_fire = st.t
            kind = EventKind.AVAILABILITY_JUMP if timer.kind == "h1" else EventKind.FEEDBACK_JUMP
            found.append((t_fire, kind, timer.node, timer))
            t_cap = min(t_cap, t_fire)

        value_tol, slope_tol = self._tolerances()
        width = t_cap - st.t
        ramp_total = self._ramp_total()
        if st.nep:
            u = first_crossing((st.x, st.total_alpha - st.capacity, 0.5 * ramp_total),
                               width, -1, value_tol, slope_tol)
            if u is not None:
                found.append((st.t + u, EventKind.BUFFER_EMPTY, None, None))
                t_cap = st.t + u
            for n in range(self.n):
                t_hit = self._timeout_guard(n, t_cap, value_tol, slope_tol)
                if t_hit is not None:
                    kind = EventKind.TIMEOUT_END if st.top[n] else EventKind.TIMEOUT_START
                    found.append((t_hit, kind, n, None))
        else:
            u = first_crossing((st.total_alpha - st.capacity, ramp_total, 0.0),
                               width, 1, slope_tol, slope_tol)
            if u is not None:
                found.append((st.t + u, EventKind.BUFFER_FILL, None, None))
        return found

    def _extend_to(self, tau: float) -> None:
        """Advance every state and history from the current time to ``tau``."""
        st = self.state
        dt = tau - st.t
        lam = [p.eval(st.t) for p in self.lambda_paths]
        alpha_dot, x_dot, _ = flow_field(st, lam, st.capacity, self.ramp)
        total = st.total_alpha
        half_ramp = 0.5 * float(alpha_dot.sum())
        for n in range(self.n):
            self.hist.alpha[n].signal.append(tau, st.alpha[n], alpha_dot[n])
            self.hist.top[n].signal.append(tau, 1.0 if st.top[n] else 0.0)
        self.hist.arrivals.signal.append(tau, st.arrivals, total, half_ramp)
        if st.nep:
            self.hist.level.signal.append(tau, st.level, st.capacity)
            self.hist.x.signal.append(tau, st.arrivals - st.level, x_dot, half_ramp)
        else:
            self.hist.level.signal.append(tau, st.level, total, half_ramp)
            self.hist.x.signal.append(tau, 0.0)
        self.ipa.extend(st.t, tau, st.nep)

        st.alpha = st.alpha + alpha_dot * dt
        st.arrivals = st.arrivals + dt * (total + half_ramp * dt)
        if st.nep:
            st.level = st.level + st.capacity * dt
            st.x = max(st.arrivals - st.level, 0.0)
            st.w = max(tau - self.hist.arrivals.signal.inverse(st.level), 0.0)
        else:
            st.level = st.arrivals
            st.x = 0.0
            st.w = 0.0
        st.t = tau
        self.w_max = max(self.w_max, st.w)
        for timer in self.timers:
            timer.value = timer.remaining(tau, st.level)

    def advance_to_next_event(self) -> Tuple[EventRecord, SystemState]:
        """Move to the next event and return it with the left-limit state.

        Candidates closer than epsilon_event to the earliest one are ordered
        by kind (exogenous, endogenous, induced) and then node index.
        """
        found = self._candidates()
        t_next = min((c[0] for c in found), default=self.horizon)
        if t_next >= self.horizon:
            self._extend_to(self.horizon)
            ev = EventRecord(k=len(self.events), tau=self.horizon, kind=EventKind.END,
                             tau_prime=np.zeros(self.n))
            return ev, replace(self.state, alpha=self.state.alpha.copy(), top=self.state.top.copy())

        window = [c for c in found if c[0] <= t_next + self.eps and c[0] < self.horizon]
        window.sort(key=lambda c: (c[1].rank, self.n if c[2] is None else c[2], c[0]))
        t_ev, kind, node, timer = window[0]
        tau = min(max(t_ev, self.state.t), self.horizon)
        self._extend_to(tau)
        self._pending_timer = timer
        ev = EventRecord(k=len(self.events), tau=tau, kind=kind, node=node,
                         trigger=None if timer is None else timer.trigger,
                         tau_prime=np.zeros(self.n))
        return ev, replace(self.state, alpha=self.state.alpha.copy(), top=self.state.top.copy())

    # ------------------------------------------------------------------
    # Event application
    # ------------------------------------------------------------------

    def apply_event(self, ev: EventRecord) -> SystemState:
        """Apply the discrete transition of ``ev`` to the current state."""
        st = self.state
        kind = ev.kind
        if kind.is_exogenous:
            self._exo_idx += 1
            if kind is EventKind.B_JUMP:
                st.capacity = self.b_path.eval(ev.tau)
                if not st.nep and st.total_alpha > st.capacity:
                    # Capacity fell below the input: the buffer starts filling now
                    st.nep = True
                    st.level = st.arrivals
        elif kind is EventKind.BUFFER_FILL:
            st.nep = True
            st.level = st.arrivals
        elif kind is EventKind.BUFFER_EMPTY:
            st.nep = False
            st.level = st.arrivals
            st.x = 0.0
            st.w = 0.0
        elif kind is EventKind.TIMEOUT_START:
            st.top[ev.node] = True
            st.alpha[ev.node] = self.alpha_min[ev.node]
            self._start_timers(ev.k, ev.node)
        elif kind is EventKind.TIMEOUT_END:
            st.top[ev.node] = False
        elif kind.is_induced:
            timer = self._pending_timer
            self.timers = [t for t in self.timers if t is not timer]
            if not any(t.trigger == timer.trigger for t in self.timers):
                self.ipa.forget_trigger(timer.trigger)
        return st

    def _event_context(self, ev: EventRecord) -> EventContext:
        st = self.state
        ctx = EventContext(
            alpha_total=st.total_alpha,
            ramp_total=self._ramp_total(),
            capacity=st.capacity,
            alpha_tilde=st.total_alpha,
            x_prime=self.ipa.state.x_prime.copy(),
            x_tilde_prime=self.ipa.state.x_prime.copy(),
            alpha_prime_total=self.ipa.state.alpha_prime.sum(axis=0),
        )
        if ev.kind in (EventKind.TIMEOUT_START, EventKind.TIMEOUT_END):
            head = self.hist.arrivals.signal.inverse(st.level) if st.nep else st.t
            head = min(head, st.t)
            ctx.alpha_tilde = sum(h.signal.eval_left(head) for h in self.hist.alpha)
            ctx.x_tilde_prime = self.ipa.x_prime_at(head)
        if ev.kind.is_induced:
            ctx.trigger_tau_prime, ctx.trigger_x_prime, ctx.trigger_alpha_total = self.ipa.trigger(ev.trigger)
        return ctx

    def _delayed_alpha(self, left: bool, fallback: np.ndarray) -> np.ndarray:
        st = self.state
        out = np.empty(self.n)
        for n in range(self.n):
            signal = self.hist.alpha[n].signal
            s = st.t - self.thetas[n]
            if s >= st.t:
                out[n] = fallback[n]
                continue
            # t - theta_n sits on the timeout start of a [gamma jump] only up to rounding
            s = signal.snap(s, self.eps)
            out[n] = signal.eval_left(s) if left else signal.eval(s)
        return out

    def _delayed_before(self, tau: float, fallback: np.ndarray) -> np.ndarray:
        """alpha_n(t - theta_n) on the interval that ends at this event.

        Events sharing one instant are separated by zero-width intervals, so
        after the first of them the value is the one left by its predecessor.
        """
        if self._delayed_tau == tau:
            return self._delayed_last.copy()
        return self._delayed_alpha(True, fallback)

    def _delayed_after(self, before: np.ndarray, fallback: np.ndarray) -> np.ndarray:
        """alpha_n(t - theta_n) on the interval that starts at this event.

        The delayed rate of node n switches at its [gamma jump]; while that
        event is still pending at the current instant the value is held.
        """
        after = self._delayed_alpha(False, fallback)
        for timer in self.timers:
            if timer.kind == "h2" and abs(timer.target - self.state.t) <= self.eps:
                after[timer.node] = before[timer.node]
        self._delayed_tau = self.state.t
        self._delayed_last = after.copy()
        return after

    def _accumulate(self, lo: float, hi: float) -> None:
        gp.accumulate_interval(
            self.acc,
            self.events[-1].k,
            lo,
            hi,
            self.state.top,
            self.thetas,
            [h.signal for h in self.hist.alpha],
            self.ipa.state.alpha_prime,
            [[h.signal for h in row] for row in self.ipa.alpha_prime_hist],
            snap_tol=self.eps,
        )

    def _prune(self) -> None:
        for window in self.hist.windows() + self.ipa.windows():
            window.observe_wait(self.w_max, self.s.theta_max)
            window.prune(self.state.t)

    # ------------------------------------------------------------------
    # Driver
    # ------------------------------------------------------------------

    def run(self) -> Trajectory:
        """Simulate the whole horizon and return the trajectory."""
        if self.horizon <= 0.0:
            result = PathResult(self.seed, 0.0, np.zeros(self.n), np.zeros((self.n, self.n)), np.zeros(self.n))
            return Trajectory(self.s, self.seed, [], {}, self.lambda_paths, self.b_path, result, self.w0)

        self._initial_events()
        same_time = 0
        while True:
            lo = self.state.t
            ev, _ = self.advance_to_next_event()
            self._accumulate(lo, ev.tau)
            if ev.kind is EventKind.END:
                self.events.append(ev)
                break

            same_time = same_time + 1 if ev.tau == lo else 0
            if same_time > MAX_EVENTS_AT_ONE_TIME or len(self.events) > MAX_EVENTS:
                raise SimulationError(
                    f"event cascade at t={ev.tau!r} (events={len(self.events)}, "
                    f"x={self.state.x!r}, w={self.state.w!r}, alpha={self.state.alpha.tolist()})"
                )

            ctx = self._event_context(ev)
            tau_prime = self.ipa.event_derivative(ev, ctx)
            ev.tau_prime = tau_prime
            if ev.kind is EventKind.TIMEOUT_START:
                self.ipa.remember_trigger(ev.k, tau_prime, ctx.x_prime, ctx.alpha_total)

            alpha_left = self.state.alpha.copy()
            top_before = self.state.top.copy()
            delayed_left = self._delayed_before(ev.tau, alpha_left)
            self.apply_event(ev)
            delayed_right = self._delayed_after(delayed_left, self.state.alpha)
            gp.accumulate_event_terms(
                self.acc, ev, tau_prime, alpha_left, self.state.alpha,
                delayed_left, delayed_right, top_before, self.state.top,
            )
            node = ev.node if ev.node is not None else 0
            self.ipa.jump(ev, tau_prime, alpha_left[node] - self.alpha_min[node], self.ramp[node])
            self.events.append(ev)
            logger.debug("Event %d %s node=%s at t=%.12g", ev.k, ev.kind.value, ev.node, ev.tau)
            if not self.keep_full:
                self._prune()

        goodput, by_node, grad, total_grad = gp.finalize(self.acc)
        result = PathResult(
            seed=self.seed,
            goodput=goodput,
            goodput_by_node=by_node,
            grad=grad,
            total_grad=total_grad,
            degenerate=self.ipa.degenerate,
            n_events=len(self.events) - 2,
            note=self.ipa.note,
        )
        logger.info("Path seed=%d: %d events, G=%.6g%s", self.seed, result.n_events, goodput,
                    " (degenerate)" if result.degenerate else "")
        signals = {w.signal.name: w.signal for w in self.hist.windows()}
        signals.update({w.signal.name: w.signal for w in self.ipa.windows()})
        return Trajectory(
            scenario=self.s,
            seed=self.seed,
            events=self.events,
            signals=signals,
            lambda_paths=self.lambda_paths,
            b_path=self.b_path,
            result=result,
            w0=self.w0,
            full=self.keep_full,
        )


def run_path(s: Scenario, seed: int, keep_full: bool = True) -> Trajectory:
    """Simulate one sample path of ``s`` under process seed ``seed``.

    Args:
        s: Scenario.
        seed: Seed of the exogenous processes.
        keep_full: Keep complete histories (needed for export and verification).

    Returns:
        The trajectory with its event log, signals and goodput result.
    """
    return PathSimulator(s, seed, keep_full=keep_full).run()


def path_result(s: Scenario, seed: int) -> PathResult:
    """Goodput and gradient of one path without retaining its histories."""
    return run_path(s, seed, keep_full=False).result
