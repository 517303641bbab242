"""Sample-path records: events, timers, states and trajectories."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from sfmipa.core.signals import HistoryWindow, PiecewiseSignal
from sfmipa.models.scenario import Scenario


class EventKind(Enum):
    """Event classes of the hybrid system, plus the two path sentinels."""
    START = "start"
    LAMBDA_JUMP = "E_lambda"
    B_JUMP = "E_B"
    BUFFER_FILL = "x>0"
    BUFFER_EMPTY = "x=0"
    TIMEOUT_START = "w>theta"
    TIMEOUT_END = "w<=theta"
    AVAILABILITY_JUMP = "alpha_tilde_jump"
    FEEDBACK_JUMP = "gamma_jump"
    END = "end"

    @property
    def rank(self) -> int:
        """Tie-break priority: exogenous < endogenous < induced."""
        return _RANKS[self]

    @property
    def is_exogenous(self) -> bool:
        return self in (EventKind.LAMBDA_JUMP, EventKind.B_JUMP)

    @property
    def is_induced(self) -> bool:
        return self in (EventKind.AVAILABILITY_JUMP, EventKind.FEEDBACK_JUMP)


_RANKS = {
    EventKind.START: -1,
    EventKind.LAMBDA_JUMP: 0,
    EventKind.B_JUMP: 0,
    EventKind.BUFFER_FILL: 1,
    EventKind.BUFFER_EMPTY: 1,
    EventKind.TIMEOUT_START: 1,
    EventKind.TIMEOUT_END: 1,
    EventKind.AVAILABILITY_JUMP: 2,
    EventKind.FEEDBACK_JUMP: 2,
    EventKind.END: 3,
}


@dataclass
class EventRecord:
    """One entry of the event log.

    Attributes:
        k: Position in the log (0 is the start sentinel).
        tau: Event time.
        kind: Event class.
        node: Node index (0-based) for node-specific events.
        trigger: Log index of the triggering event (induced events).
        tau_prime: Event-time derivative with respect to every theta_j.
    """
    k: int
    tau: float
    kind: EventKind
    node: Optional[int] = None
    trigger: Optional[int] = None
    tau_prime: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def signature(self):
        return (self.kind, self.node)


@dataclass
class TimerState:
    """A running timer started by a [w>theta_n] event.

    ``h1`` drains at the capacity rate and expires when the head of the
    channel reaches the fluid sent at the trigger (``target`` is the
    cumulative-arrival level of that fluid). ``h2`` drains at rate one and
    expires at ``target`` = trigger time + theta_n.
    """
    trigger: int
    kind: str
    node: int
    started_at: float
    target: float
    value: float

    def remaining(self, t: float, level: float) -> float:
        if self.kind == "h1":
            return max(self.target - level, 0.0)
        return max(self.target - t, 0.0)


@dataclass
class PathHistories:
    """Retained trajectories of one path (owned by a single simulation)."""
    alpha: List[HistoryWindow]
    top: List[HistoryWindow]
    arrivals: HistoryWindow
    level: HistoryWindow
    x: HistoryWindow

    def windows(self) -> List[HistoryWindow]:
        return [*self.alpha, *self.top, self.arrivals, self.level, self.x]


@dataclass
class SystemState:
    """Continuous and discrete state at one instant.

    ``arrivals`` is cumulative input A(t) and ``level`` the head index L(t):
    the head fluid is the fluid that arrived when A equalled L, so
    x = A - L and w(t) = t - A^{-1}(L(t)).
    """
    t: float
    alpha: np.ndarray
    x: float
    w: float
    arrivals: float
    level: float
    capacity: float
    top: np.ndarray
    nep: bool
    histories: Optional[PathHistories] = None

    @property
    def total_alpha(self) -> float:
        return float(np.sum(self.alpha))


@dataclass
class PathResult:
    """Goodput and its IPA gradient for one sample path."""
    seed: int
    goodput: float
    goodput_by_node: np.ndarray
    grad: np.ndarray
    total_grad: np.ndarray
    degenerate: bool = False
    n_events: int = 0
    note: str = ""

    @property
    def local_grad(self) -> np.ndarray:
        """dG_n/dtheta_n for every node (the distributed estimator)."""
        return np.diag(self.grad).copy()


@dataclass
class Trajectory:
    """Event log and retained signals of one sample path.

    Attributes:
        scenario: Scenario the path was run under.
        seed: Process seed.
        events: Event log including the start and end sentinels.
        signals: Retained state and derivative signals by name.
        lambda_paths: Supply-rate realizations.
        b_path: Capacity realization.
        result: Goodput and gradient of the path.
        w0: Common waiting time at t = 0.
        full: Whether the signals cover the whole horizon.
    """
    scenario: Scenario
    seed: int
    events: List[EventRecord]
    signals: Dict[str, PiecewiseSignal]
    lambda_paths: List[PiecewiseSignal]
    b_path: PiecewiseSignal
    result: PathResult
    w0: float = 0.0
    full: bool = True

    @property
    def n_events(self) -> int:
        """K: number of events strictly between the sentinels."""
        return sum(1 for ev in self.events if ev.kind not in (EventKind.START, EventKind.END))

    def interior_events(self) -> List[EventRecord]:
        return [ev for ev in self.events if ev.kind not in (EventKind.START, EventKind.END)]

    def alpha(self, n: int, t: float) -> float:
        return self.signals[f"alpha_{n + 1}"].eval(t)

    def x(self, t: float) -> float:
        return self.signals["x"].eval(t)

    def head_time(self, t: float) -> float:
        """Arrival time t - w(t) of the fluid at the head of the channel."""
        if t < 0.0:
            return t - self.w0
        if self.signals["x"].eval(t) <= 0.0:
            return t
        return min(self.signals["arrivals"].inverse(self.signals["level"].eval(t)), t)

    def waiting_time(self, t: float) -> float:
        return t - self.head_time(t)

    def in_timeout(self, n: int, t: float) -> bool:
        return self.signals[f"top_{n + 1}"].eval(t) > 0.5

    def alpha_tilde(self, t: float, left: bool = False) -> np.ndarray:
        """Availability rates alpha_n(t - w(t)) of every class."""
        a = self.head_time(t)
        return np.array([
            self.signals[f"alpha_{n + 1}"].eval_left(a) if left else self.signals[f"alpha_{n + 1}"].eval(a)
            for n in range(self.scenario.n_nodes)
        ])

    def gamma(self, n: int, t: float) -> float:
        """Feedback (retransmission) rate of node n."""
        if not self.in_timeout(n, t):
            return 0.0
        return self.signals[f"alpha_{n + 1}"].eval(t - self.scenario.thetas[n])

    def sample_times(self, dt: Optional[float] = None) -> np.ndarray:
        """Export grid: a regular grid plus every event time, ending at T."""
        horizon = self.scenario.horizon
        dt = dt or self.scenario.sample_dt
        grid = np.arange(0.0, horizon, dt)
        taus = np.array([ev.tau for ev in self.events])
        return np.unique(np.concatenate([grid, taus, [horizon]]))
