"""Per-class FCFS verification pass.

The main simulation only tracks the aggregate buffer. This pass rebuilds
every class buffer x_n from its own dynamics (input alpha_n, output the
FCFS share beta_n) by numerical quadrature, solves each class waiting time
from its defining balance, and checks that all classes share the common
waiting time of the simulation.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from sfmipa.core.signals import first_root
from sfmipa.core.simulator import service_shares
from sfmipa.exceptions import ModelViolationError
from sfmipa.models.records import EventKind, Trajectory
from sfmipa.models.reports import FcfsReport

logger = logging.getLogger(__name__)


def _in_nep(traj: Trajectory, lo: float, hi: float) -> bool:
    return traj.x(0.5 * (lo + hi)) > 0.0


def _shares(traj: Trajectory, t: float) -> np.ndarray:
    return service_shares(traj.alpha_tilde(t), traj.b_path.eval(t))


def class_balances(traj: Trajectory, grid_points: int = 20000) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class buffer contents and cumulative outputs on a fine grid.

    Args:
        traj: A trajectory with full histories.
        grid_points: Number of regular grid intervals (event times are added).

    Returns:
        ``(grid, x_n, out_n)`` with arrays of shape (len(grid), N).
    """
    s = traj.scenario
    n_nodes = s.n_nodes
    taus = [ev.tau for ev in traj.events]
    grid = np.unique(np.concatenate([np.linspace(0.0, s.horizon, grid_points + 1), taus]))

    # Every interior grid point appears twice (right value of one interval,
    # left value of the next) so jumps at event times are resolved exactly.
    # Shares are taken a hair inside each cell: the head time at an
    # [alpha_tilde jump] sits on the rate jump only up to rounding.
    n_cells = len(grid) - 1
    times = np.repeat(grid, 2)[1:-1]
    net = np.zeros((2 * n_cells, n_nodes))
    out = np.zeros_like(net)
    for i in range(n_cells):
        lo, hi = float(grid[i]), float(grid[i + 1])
        a_lo = np.array([traj.signals[f"alpha_{n + 1}"].eval(lo) for n in range(n_nodes)])
        a_hi = np.array([traj.signals[f"alpha_{n + 1}"].eval_left(hi) for n in range(n_nodes)])
        if _in_nep(traj, lo, hi):
            nudge = 1e-9 * (hi - lo)
            b_lo = _shares(traj, lo + nudge)
            b_hi = _shares(traj, hi - nudge)
            net[2 * i], net[2 * i + 1] = a_lo - b_lo, a_hi - b_hi
            out[2 * i], out[2 * i + 1] = b_lo, b_hi
        else:
            out[2 * i], out[2 * i + 1] = a_lo, a_hi

    picks = np.append(np.arange(0, 2 * n_cells, 2), 2 * n_cells - 1)
    pre = np.array(s.init.prehistory, dtype=float)
    x_n = pre * traj.w0 + cumulative_trapezoid(net, times, axis=0, initial=0.0)[picks]
    out_n = cumulative_trapezoid(out, times, axis=0, initial=0.0)[picks]
    return grid, x_n, out_n


def class_waiting_time(
    t: float,
    n: int,
    grid: np.ndarray,
    x_n: np.ndarray,
    out_n: np.ndarray,
    prehistory: float,
    w0: float,
    scan_step: Optional[float] = None,
) -> float:
    """Waiting time of class n at t: the w with output over [t - w, t] equal to x_n(t - w).

    The root is bracketed by scanning [0, t + w0] in steps of ``scan_step``
    (one eighth of that range when unset).
    """

    def content(s: float) -> float:
        return prehistory * w0 if s < 0.0 else float(np.interp(s, grid, x_n[:, n]))

    def output(s: float) -> float:
        return prehistory * s if s < 0.0 else float(np.interp(s, grid, out_n[:, n]))

    if content(t) <= 0.0:
        return 0.0
    served = output(t)

    def balance(w: float) -> float:
        return served - output(t - w) - content(t - w)

    w_hi = t + w0
    step = min(scan_step, w_hi) if scan_step else w_hi / 8.0
    root = first_root(balance, 0.0, w_hi, tol=1e-12 * max(1.0, w_hi), scan_step=step)
    if root is None:
        raise ModelViolationError(f"class {n + 1} waiting time not bracketed at t={t!r}")
    return root


def verify_fcfs(traj: Trajectory, n_samples: int = 1000, grid_points: int = 20000) -> FcfsReport:
    """Check the common-waiting-time property on a full trajectory.

    Args:
        traj: Trajectory from ``run_path(..., keep_full=True)``.
        n_samples: Sample times for the waiting-time and capacity checks.
        grid_points: Quadrature grid size for the class buffers.

    Returns:
        FcfsReport with the largest deviations found.
    """
    if not traj.full:
        raise ModelViolationError("FCFS verification needs a trajectory with full histories")
    s = traj.scenario
    horizon = s.horizon
    pre = np.array(s.init.prehistory, dtype=float)
    grid, x_n, out_n = class_balances(traj, grid_points)

    samples = np.linspace(0.0, horizon, n_samples + 1)[1:]
    wait_error = 0.0
    capacity_error = 0.0
    for t in samples:
        t = float(t)
        w = traj.waiting_time(t)
        for n in range(s.n_nodes):
            w_n = class_waiting_time(t, n, grid, x_n, out_n, pre[n], traj.w0, scan_step=s.settings.scan_step)
            wait_error = max(wait_error, abs(w_n - w))
        capacity = traj.b_path.eval(t)
        shares = service_shares(traj.alpha_tilde(t), capacity)
        capacity_error = max(capacity_error, abs(float(shares.sum()) - capacity) / capacity)

    totals = np.array([traj.x(float(t)) for t in grid])
    class_mass_error = float(np.max(np.abs(x_n.sum(axis=1) - totals)))

    report = FcfsReport(
        max_wait_error=wait_error,
        order_preserved=head_order_preserved(traj),
        max_capacity_error=capacity_error,
        max_class_mass_error=class_mass_error,
        mass_balance_error=mass_balance_residual(traj),
        n_samples=n_samples,
    )
    logger.info("FCFS check seed=%d: wait error %.3e, order %s", traj.seed, wait_error, report.order_preserved)
    return report


def head_order_preserved(traj: Trajectory, slack_rel: float = 1e-9) -> bool:
    """t - w(t) increases across event times and midpoints of busy periods."""
    taus = sorted({ev.tau for ev in traj.events})
    points: List[float] = []
    for lo, hi in zip(taus, taus[1:]):
        points.append(lo)
        if _in_nep(traj, lo, hi):
            points.append(0.5 * (lo + hi))
    points.append(taus[-1])
    heads = [traj.head_time(t) for t in points]
    slack = slack_rel * traj.scenario.horizon
    return all(b - a > -slack for a, b in zip(heads, heads[1:]))


def mass_balance_residual(traj: Trajectory) -> float:
    """|x(T) - x(0) - integral of (sum alpha - B) over busy periods|."""
    s = traj.scenario
    taus = sorted({ev.tau for ev in traj.events})
    net = 0.0
    for lo, hi in zip(taus, taus[1:]):
        if hi > lo and _in_nep(traj, lo, hi):
            net += sum(traj.signals[f"alpha_{n + 1}"].integrate(lo, hi) for n in range(s.n_nodes))
            net -= traj.b_path.integrate(lo, hi)
    return abs(traj.x(s.horizon) - s.init.x0 - net)


def timer_residuals(traj: Trajectory) -> Tuple[float, float]:
    """Largest timing errors of induced events.

    Returns:
        ``(h1_error, h2_error)``: capacity drained between trigger and
        [alpha_tilde jump] against the buffer content at the trigger, and
        [gamma jump] time against trigger time + theta_n.
    """
    by_k = {ev.k: ev for ev in traj.events}
    h1_error = 0.0
    h2_error = 0.0
    for ev in traj.events:
        if ev.trigger is None:
            continue
        trigger = by_k[ev.trigger]
        if ev.kind is EventKind.AVAILABILITY_JUMP:
            drained = traj.b_path.integrate(trigger.tau, ev.tau)
            h1_error = max(h1_error, abs(drained - traj.x(trigger.tau)))
        else:
            h2_error = max(h2_error, abs(ev.tau - (trigger.tau + traj.scenario.thetas[ev.node])))
    if math.isnan(h1_error) or math.isnan(h2_error):
        raise ModelViolationError("timer residuals are not finite")
    return h1_error, h2_error
