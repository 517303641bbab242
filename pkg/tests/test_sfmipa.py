"""Unit tests for the SFMIPA simulator."""

import contextlib
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from unittest import mock

# Ensure sfmipa package is importable
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pandas as pd

from sfmipa.cli.main import main
from sfmipa.core.exporter import (
    events_frame,
    iterates_frame,
    oracle_frame,
    path_results_frame,
    trajectory_frame,
    write_frame,
    write_manifest,
)
from sfmipa.core.fcfs import class_waiting_time, mass_balance_residual, timer_residuals, verify_fcfs
from sfmipa.core.goodput import (
    GoodputAccumulator,
    accumulate_event_terms,
    accumulate_interval,
    summarize_paths,
)
from sfmipa.core.hasher import canonicalize_config, compute_file_hash, run_hash, scenario_hash
from sfmipa.core.ipa import (
    EventContext,
    EventDerivative,
    IpaState,
    IpaTracker,
    apply_state_jump,
    delayed_alpha_derivative,
    event_time_derivative,
    integrate_delayed_alpha_derivative,
    waiting_time_derivative,
)
from sfmipa.core.optimizer import (
    BOUNDARY_OFFSET,
    gradient_estimate,
    interior_thetas,
    optimize,
    project,
    sweep_thresholds,
    threshold_grid,
)
from sfmipa.core.oracle import (
    compare_ipa_fd,
    default_delta,
    fd_gradient,
    order_stable,
    perturbed_pair,
    relative_error,
    richardson_sequence,
)
from sfmipa.core.runner import map_paths, resolve_jobs
from sfmipa.core.scenario import (
    SEED_ENV,
    load_scenario,
    realize_processes,
    resolve_seed,
    save_scenario,
    scenario_from_dict,
)
from sfmipa.core.signals import (
    HistoryWindow,
    PiecewiseSignal,
    first_crossing,
    first_root,
    quadratic_roots,
    shift_polynomial,
)
from sfmipa.core.simulator import flow_field, path_result, run_path, service_shares, utilization
from sfmipa.exceptions import (
    DegenerateEventError,
    EstimationError,
    ModelViolationError,
    ScenarioParseError,
    ScenarioValidationError,
    SignalDomainError,
    SimulationError,
)
from sfmipa.models.records import EventKind, EventRecord, PathResult, SystemState
from sfmipa.models.reports import OracleReport, OracleRow
from sfmipa.models.scenario import OptimizerConfig
from sfmipa.utils.file_utils import ensure_directory, read_json, write_json

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _scenario_dict(**overrides):
    """A small one-node scenario that times out within its horizon."""
    data = {
        "n_nodes": 1,
        "horizon": 12.0,
        "thetas": [1.0],
        "seed": 3,
        "policy": {"ramp_rates": [1.0], "alpha_min": [0.5]},
        "lambda_specs": [{"kind": "constant", "value": 10.0}],
        "b_spec": {"kind": "markov", "levels": [4.0, 6.0], "jump_rate": 0.5, "initial": 0},
        "init": {"alpha0": [2.0], "x0": 0.0},
    }
    data.update(overrides)
    return data


def _context(n_nodes=2, **fields):
    values = {
        "alpha_total": 3.0,
        "ramp_total": 1.0,
        "capacity": 4.0,
        "alpha_tilde": 3.0,
        "x_prime": np.zeros(n_nodes),
        "x_tilde_prime": np.zeros(n_nodes),
        "alpha_prime_total": np.zeros(n_nodes),
    }
    values.update(fields)
    return EventContext(**values)


def _event(kind, node=None, trigger=None, n_nodes=2):
    return EventRecord(k=5, tau=1.0, kind=kind, node=node, trigger=trigger, tau_prime=np.zeros(n_nodes))


class TestSignals(unittest.TestCase):
    """Tests for piecewise signals and root isolation."""

    def test_shift_polynomial(self):
        """1 + 2s + 3s^2 around s = 1 is 6 + 8u + 3u^2."""
        self.assertEqual(shift_polynomial(1.0, 2.0, 3.0, 1.0), (6.0, 8.0, 3.0))

    def test_quadratic_roots(self):
        self.assertEqual(quadratic_roots(-1.0, 0.0, 1.0), [-1.0, 1.0])
        np.testing.assert_allclose(quadratic_roots(2.0, -3.0, 1.0), [1.0, 2.0])
        self.assertEqual(quadratic_roots(4.0, 2.0, 0.0), [-2.0])
        self.assertEqual(quadratic_roots(0.0, 0.0, 0.0), [])
        self.assertEqual(quadratic_roots(1.0, 0.0, 1.0), [])

    def test_first_crossing_directions(self):
        """Crossings are reported only in the watched direction."""
        self.assertEqual(first_crossing((-1.0, 1.0, 0.0), 5.0, 1, 1e-12, 1e-12), 1.0)
        self.assertEqual(first_crossing((1.0, -2.0, 0.0), 5.0, -1, 1e-12, 1e-12), 0.5)
        self.assertIsNone(first_crossing((-1.0, 1.0, 0.0), 0.5, 1, 1e-12, 1e-12))
        self.assertIsNone(first_crossing((-1.0, -2.0, 0.0), 5.0, 1, 1e-12, 1e-12))

    def test_first_crossing_at_window_start(self):
        """A guard already past zero, or leaving zero the right way, fires at once."""
        self.assertEqual(first_crossing((0.5, -1.0, 0.0), 5.0, 1, 1e-12, 1e-12), 0.0)
        self.assertEqual(first_crossing((0.0, 1.0, 0.0), 5.0, 1, 1e-12, 1e-12), 0.0)
        self.assertEqual(first_crossing((0.0, 0.0, 1.0), 5.0, 1, 1e-12, 1e-12), 0.0)
        self.assertIsNone(first_crossing((0.0, -1.0, 0.0), 5.0, 1, 1e-12, 1e-12))

    def test_eval_and_left_limit(self):
        sig = PiecewiseSignal.from_steps([0.0, 2.0], [1.0, 3.0], 0.0, 5.0, name="step")
        self.assertEqual(sig.eval(2.0), 3.0)
        self.assertEqual(sig.eval_left(2.0), 1.0)
        self.assertEqual(sig.eval(5.0), 3.0)
        self.assertEqual(sig.breakpoints, [2.0])

    def test_eval_outside_domain(self):
        sig = PiecewiseSignal.constant(1.0, 0.0, 1.0, name="c")
        with self.assertRaises(SignalDomainError):
            sig.eval(2.0)
        with self.assertRaises(SignalDomainError):
            PiecewiseSignal(0.0, "empty").eval(0.0)

    def test_append_rejects_past(self):
        sig = PiecewiseSignal.constant(1.0, 0.0, 1.0)
        with self.assertRaises(ValueError):
            sig.append(0.5, 2.0)

    def test_zero_length_segment_is_dropped(self):
        sig = PiecewiseSignal(0.0)
        sig.append(1.0, 1.0)
        sig.append(1.0, 7.0)
        self.assertEqual(len(sig), 1)

    def test_integrate_quadratic(self):
        """Integral of 1 + 2s + 3s^2 over [0, 2] is 14."""
        sig = PiecewiseSignal(0.0)
        sig.append(2.0, 1.0, 2.0, 3.0)
        self.assertAlmostEqual(sig.integrate(0.0, 2.0), 14.0, places=12)
        self.assertAlmostEqual(sig.integrate(2.0, 0.0), -14.0, places=12)
        self.assertEqual(sig.integrate(1.0, 1.0), 0.0)

    def test_integrate_across_segments(self):
        sig = PiecewiseSignal.from_steps([0.0, 1.0, 3.0], [2.0, 4.0, 1.0], 0.0, 4.0)
        self.assertAlmostEqual(sig.integrate(0.5, 3.5), 1.0 + 8.0 + 0.5, places=12)

    def test_inverse(self):
        sig = PiecewiseSignal(0.0, "A")
        sig.append(1.0, 0.0, 2.0)
        sig.append(3.0, 2.0, 1.0, 0.5)
        self.assertAlmostEqual(sig.inverse(2.0), 1.0, places=12)
        self.assertAlmostEqual(sig.inverse(1.0), 0.5, places=12)
        self.assertAlmostEqual(sig.inverse(3.5), 2.0, places=12)
        with self.assertRaises(SignalDomainError):
            sig.inverse(100.0)

    def test_segments_are_local(self):
        sig = PiecewiseSignal(0.0)
        sig.append(4.0, 0.0, 1.0)
        pieces = list(sig.segments(1.0, 3.0))
        self.assertEqual(len(pieces), 1)
        lo, hi, coefs = pieces[0]
        self.assertEqual((lo, hi), (1.0, 3.0))
        self.assertEqual(coefs, (1.0, 1.0, 0.0))

    def test_prune_keeps_recent_data(self):
        sig = PiecewiseSignal(0.0, "long")
        for k in range(1000):
            sig.append(k + 1.0, float(k))
        sig.prune(900.5)
        self.assertEqual(len(sig), 100)
        self.assertEqual(sig.t_lo, 900.0)
        self.assertEqual(sig.eval(950.5), 950.0)
        with self.assertRaises(SignalDomainError):
            sig.eval(10.0)

    def test_prune_small_signal_is_noop(self):
        sig = PiecewiseSignal.from_steps([0.0, 1.0], [1.0, 2.0], 0.0, 2.0)
        sig.prune(1.5)
        self.assertEqual(sig.t_lo, 0.0)

    def test_history_window_grows(self):
        window = HistoryWindow(PiecewiseSignal.constant(0.0, -1.0, 0.0), retention=1.0, margin=0.1)
        window.observe_wait(2.0, 1.0)
        self.assertAlmostEqual(window.retention, 3.3)
        window.observe_wait(0.5, 0.5)
        self.assertAlmostEqual(window.retention, 3.3)

    def test_first_root(self):
        root = first_root(lambda t: t - 0.3, 0.0, 1.0, tol=1e-12, scan_step=0.1)
        self.assertAlmostEqual(root, 0.3, places=10)
        self.assertIsNone(first_root(lambda t: t + 1.0, 0.0, 1.0, tol=1e-12))
        self.assertIsNone(first_root(lambda t: t, 1.0, 1.0, tol=1e-12))

    def test_snap_to_breakpoint(self):
        sig = PiecewiseSignal.from_steps([-5.0, 0.0], [1.0, 3.0], -5.0, 10.0)
        near = -1e-12
        self.assertEqual(sig.snap(near, 1e-9), 0.0)
        self.assertEqual(sig.snap(near, 0.0), near)
        self.assertEqual(sig.snap(0.5, 1e-9), 0.5)
        # Only after snapping do the two sides of the jump come out right
        self.assertEqual(sig.eval(near), 1.0)
        self.assertEqual(sig.eval(sig.snap(near, 1e-9)), 3.0)
        self.assertEqual(sig.eval_left(sig.snap(near, 1e-9)), 1.0)


class TestScenario(unittest.TestCase):
    """Tests for scenario loading, validation and realization."""

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def test_load_bundled_scenarios(self):
        """Every bundled scenario loads and validates."""
        for path in sorted(SCENARIOS.glob("*.json")):
            s = load_scenario(path)
            self.assertEqual(len(s.thetas), s.n_nodes)

    def test_load_sanity(self):
        s = load_scenario(SCENARIOS / "sanity.json")
        self.assertEqual(s.n_nodes, 1)
        self.assertEqual(s.horizon, 20.0)
        self.assertEqual(s.thetas, (1.0,))
        self.assertEqual(s.seed, 7)
        self.assertEqual(s.b_spec.levels, (4.0, 6.0))
        self.assertEqual(s.init.waiting_time, 0.0)

    def test_waiting_time_derived_from_prehistory(self):
        s = load_scenario(SCENARIOS / "three_node.json")
        self.assertAlmostEqual(s.init.waiting_time, 1.11 / 3.7)

    def test_save_roundtrip(self):
        s = load_scenario(SCENARIOS / "three_node.json")
        path = save_scenario(s, Path(self.tmpdir) / "copy.json")
        self.assertEqual(load_scenario(path), s)

    def test_missing_file(self):
        with self.assertRaises(ScenarioParseError):
            load_scenario(Path(self.tmpdir) / "nope.json")

    def test_syntax_error_has_location(self):
        path = Path(self.tmpdir) / "bad.json"
        path.write_text('{\n  "n_nodes": 1,\n  "horizon": \n}\n')
        with self.assertRaises(ScenarioParseError) as ctx:
            load_scenario(path)
        self.assertEqual(ctx.exception.line, 4)
        self.assertEqual(ctx.exception.column, 1)
        self.assertIn("bad.json:4:1", str(ctx.exception))

    def test_missing_field(self):
        data = _scenario_dict()
        del data["thetas"]
        with self.assertRaises(ScenarioParseError) as ctx:
            scenario_from_dict(data)
        self.assertIn("thetas", str(ctx.exception))

    def test_wrong_type(self):
        with self.assertRaises(ScenarioParseError):
            scenario_from_dict(_scenario_dict(horizon="long"))
        with self.assertRaises(ScenarioParseError):
            scenario_from_dict(_scenario_dict(n_nodes=True))

    def test_validation_messages(self):
        """Each violated invariant is named."""
        cases = [
            (_scenario_dict(thetas=[-1.0]), "theta"),
            (_scenario_dict(horizon=0.0), "horizon"),
            (_scenario_dict(thetas=[1.0, 2.0]), "thetas"),
            (_scenario_dict(policy={"ramp_rates": [0.0], "alpha_min": [0.5]}), "ramp_rates"),
            (_scenario_dict(init={"alpha0": [0.1], "x0": 0.0}), "alpha0"),
            (_scenario_dict(init={"alpha0": [2.0], "x0": -1.0}), "x0"),
            (_scenario_dict(b_spec={"kind": "constant", "value": 0.0}), "b_spec"),
            (_scenario_dict(b_spec={"kind": "schedule", "times": [2.0, 1.0], "values": [1.0, 2.0, 3.0]}), "increasing"),
            (_scenario_dict(init={"alpha0": [2.0], "x0": 1.0, "w0": 0.9}), "w0"),
        ]
        for data, needle in cases:
            with self.subTest(needle=needle):
                with self.assertRaises(ScenarioValidationError) as ctx:
                    scenario_from_dict(data)
                self.assertIn(needle, str(ctx.exception))

    def test_consistent_w0_accepted(self):
        s = scenario_from_dict(_scenario_dict(init={"alpha0": [2.0], "x0": 1.0, "w0": 0.5}))
        self.assertEqual(s.init.waiting_time, 0.5)

    def test_resolve_seed_precedence(self):
        s = scenario_from_dict(_scenario_dict(seed=3))
        with mock.patch.dict(os.environ, {SEED_ENV: "11"}):
            self.assertEqual(resolve_seed(5, s), 5)
            self.assertEqual(resolve_seed(None, s), 11)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_seed(None, s), 3)
        with mock.patch.dict(os.environ, {SEED_ENV: "abc"}):
            with self.assertRaises(ScenarioValidationError):
                resolve_seed(None, s)

    def test_realization_is_deterministic(self):
        s = scenario_from_dict(_scenario_dict())
        _, b1 = realize_processes(s, 42)
        _, b2 = realize_processes(s, 42)
        self.assertEqual(b1.breakpoints, b2.breakpoints)
        self.assertEqual(b1.sample(b1.breakpoints).tolist(), b2.sample(b2.breakpoints).tolist())

    def test_markov_levels_alternate(self):
        """With two levels every jump moves to the other level."""
        s = scenario_from_dict(_scenario_dict(horizon=200.0))
        _, b = realize_processes(s, 1)
        values = b.sample([0.0] + b.breakpoints)
        self.assertGreater(len(values), 10)
        self.assertTrue(all(a != c for a, c in zip(values, values[1:])))
        self.assertTrue(set(values.tolist()) <= {4.0, 6.0})

    def test_schedule_realization(self):
        s = scenario_from_dict(_scenario_dict(
            b_spec={"kind": "schedule", "times": [3.0, 20.0], "values": [4.0, 6.0, 8.0]},
        ))
        _, b = realize_processes(s, 0)
        self.assertEqual(b.breakpoints, [3.0])
        self.assertEqual(b.eval(2.0), 4.0)
        self.assertEqual(b.eval(3.0), 6.0)


class TestSimulator(unittest.TestCase):
    """Tests for sample-path simulation."""

    @classmethod
    def setUpClass(cls):
        cls.sanity = load_scenario(SCENARIOS / "sanity.json")
        cls.no_timeout = load_scenario(SCENARIOS / "no_timeout.json")
        cls.traj = run_path(cls.sanity, 7)

    def test_service_shares(self):
        shares = service_shares([1.0, 3.0], 8.0)
        np.testing.assert_allclose(shares, [2.0, 6.0])
        np.testing.assert_allclose(utilization([1.0, 3.0], 8.0), [0.25, 0.75])
        with self.assertRaises(ModelViolationError):
            service_shares([0.0, 0.0], 4.0)

    def test_flow_field_empty_buffer(self):
        state = SystemState(
            t=0.0, alpha=np.array([1.0, 2.0]), x=0.0, w=0.0, arrivals=0.0, level=0.0,
            capacity=4.0, top=np.array([False, True]), nep=False,
        )
        alpha_dot, x_dot, w_dot = flow_field(state, [5.0, 5.0], 4.0, [0.5, 0.7])
        np.testing.assert_allclose(alpha_dot, [0.5, 0.0])
        self.assertEqual(x_dot, 0.0)
        self.assertEqual(w_dot, 0.0)

    def test_flow_field_needs_histories(self):
        state = SystemState(
            t=1.0, alpha=np.array([5.0]), x=1.0, w=0.2, arrivals=3.0, level=2.0,
            capacity=4.0, top=np.array([False]), nep=True,
        )
        with self.assertRaises(ModelViolationError):
            flow_field(state, [5.0], 4.0, [1.0])

    def test_no_timeout_goodput(self):
        """Thresholds above every reachable wait give G = integral of alpha and zero gradient."""
        traj = run_path(self.no_timeout, 0)
        self.assertAlmostEqual(traj.result.goodput, 80.0, delta=1e-9)
        np.testing.assert_allclose(traj.result.goodput_by_node, [35.0, 45.0], atol=1e-9)
        self.assertTrue(np.all(traj.result.grad == 0.0))
        kinds = {ev.kind for ev in traj.events}
        self.assertNotIn(EventKind.TIMEOUT_START, kinds)
        self.assertIn(EventKind.BUFFER_FILL, kinds)

    def test_event_log_structure(self):
        events = self.traj.events
        self.assertIs(events[0].kind, EventKind.START)
        self.assertEqual(events[0].tau, 0.0)
        self.assertIs(events[-1].kind, EventKind.END)
        self.assertEqual(events[-1].tau, self.sanity.horizon)
        self.assertEqual([ev.k for ev in events], list(range(len(events))))
        taus = [ev.tau for ev in events]
        self.assertEqual(taus, sorted(taus))
        self.assertEqual(self.traj.n_events, len(events) - 2)

    def test_timeouts_occur_and_drop_rate(self):
        starts = [ev for ev in self.traj.events if ev.kind is EventKind.TIMEOUT_START]
        self.assertTrue(starts)
        for ev in starts:
            self.assertEqual(self.traj.alpha(ev.node, ev.tau), 0.5)
            self.assertTrue(self.traj.in_timeout(ev.node, ev.tau))

    def test_induced_events_follow_triggers(self):
        by_k = {ev.k: ev for ev in self.traj.events}
        for ev in self.traj.events:
            if ev.kind.is_induced:
                self.assertIs(by_k[ev.trigger].kind, EventKind.TIMEOUT_START)
                self.assertGreaterEqual(ev.tau, by_k[ev.trigger].tau)

    def test_feedback_jump_lands_on_timeout_start(self):
        """At a [gamma jump] the delayed lookup t - theta_n hits the triggering drop of alpha_n."""
        traj = run_path(self.sanity, 3)
        alpha = traj.signals["alpha_1"]
        by_k = {ev.k: ev for ev in traj.events}
        jumps = [ev for ev in traj.events if ev.kind is EventKind.FEEDBACK_JUMP]
        self.assertTrue(jumps)
        for ev in jumps:
            lookup = alpha.snap(ev.tau - self.sanity.thetas[0], self.sanity.event_eps)
            self.assertEqual(lookup, by_k[ev.trigger].tau)
            self.assertEqual(alpha.eval(lookup), 0.5)
            self.assertGreater(alpha.eval_left(lookup), 0.5)

    def test_timer_and_mass_residuals(self):
        h1_error, h2_error = timer_residuals(self.traj)
        self.assertLessEqual(h2_error, 1e-9 * self.sanity.horizon)
        self.assertLessEqual(h1_error, 1e-9 * 6.0 * self.sanity.horizon)
        self.assertLess(mass_balance_residual(self.traj), 1e-8)

    def test_class_waiting_time_scan_step(self):
        """Constant content 2 drained at rate 1 waits 2 whatever the bracketing step."""
        grid = np.array([0.0, 10.0])
        x_n = np.array([[2.0], [2.0]])
        out_n = np.array([[0.0], [10.0]])
        for step in (None, 0.05, 100.0):
            with self.subTest(scan_step=step):
                w = class_waiting_time(5.0, 0, grid, x_n, out_n, 1.0, 2.0, scan_step=step)
                self.assertAlmostEqual(w, 2.0, places=9)

    def test_verify_fcfs_uses_configured_scan_step(self):
        s = replace(self.sanity, settings=replace(self.sanity.settings, scan_step=0.25))
        traj = run_path(s, 7)
        with mock.patch("sfmipa.core.fcfs.class_waiting_time", wraps=class_waiting_time) as spy:
            verify_fcfs(traj, n_samples=4, grid_points=2000)
        self.assertTrue(spy.called)
        self.assertTrue(all(c.kwargs["scan_step"] == 0.25 for c in spy.call_args_list))

    def test_waiting_time_below_threshold_outside_timeout(self):
        """Ramping nodes never see w above theta at event times."""
        for ev in self.traj.events:
            if not self.traj.in_timeout(0, ev.tau):
                self.assertLessEqual(self.traj.waiting_time(ev.tau), 1.0 + 1e-6)

    def test_initial_timeout(self):
        """w0 above theta starts the node in timeout at t = 0."""
        s = scenario_from_dict(_scenario_dict(init={"alpha0": [2.0], "x0": 3.0}))
        traj = run_path(s, 0)
        first = traj.events[1]
        self.assertIs(first.kind, EventKind.TIMEOUT_START)
        self.assertEqual(first.tau, 0.0)
        self.assertEqual(traj.alpha(0, 0.0), 0.5)
        feedback = [ev for ev in traj.events if ev.kind is EventKind.FEEDBACK_JUMP and ev.trigger == first.k]
        self.assertEqual(len(feedback), 1)
        self.assertAlmostEqual(feedback[0].tau, 1.0, delta=1e-9)

    def test_deterministic(self):
        again = run_path(self.sanity, 7)
        self.assertEqual(
            [(ev.tau, ev.kind, ev.node) for ev in again.events],
            [(ev.tau, ev.kind, ev.node) for ev in self.traj.events],
        )
        self.assertEqual(again.result.goodput, self.traj.result.goodput)

    def test_pruned_run_matches_full_run(self):
        result = path_result(self.sanity, 7)
        self.assertEqual(result.goodput, self.traj.result.goodput)
        np.testing.assert_array_equal(result.grad, self.traj.result.grad)

    def test_exogenous_events_have_zero_derivative(self):
        for ev in self.traj.events:
            if ev.kind.is_exogenous:
                self.assertTrue(np.all(ev.tau_prime == 0.0))

    def test_common_random_numbers(self):
        nominal, perturbed = perturbed_pair(self.sanity, 7, 0, 1e-3)
        self.assertEqual(nominal.b_path.breakpoints, perturbed.b_path.breakpoints)

    def test_zero_horizon(self):
        s = replace(self.sanity, horizon=0.0)
        traj = run_path(s, 1)
        self.assertEqual(traj.events, [])
        self.assertEqual(traj.result.goodput, 0.0)


class TestIpa(unittest.TestCase):
    """Tests for event-time derivatives and derivative jumps."""

    def test_exogenous_and_sentinels(self):
        for kind in (EventKind.START, EventKind.END, EventKind.B_JUMP, EventKind.LAMBDA_JUMP):
            d = event_time_derivative(_event(kind), _context(), 2)
            np.testing.assert_array_equal(d.tau_prime, [0.0, 0.0])

    def test_buffer_fill(self):
        ctx = _context(ramp_total=2.0, alpha_prime_total=np.array([1.0, -1.0]))
        d = event_time_derivative(_event(EventKind.BUFFER_FILL), ctx, 2)
        np.testing.assert_allclose(d.tau_prime, [-0.5, 0.5])

    def test_buffer_empty(self):
        ctx = _context(alpha_total=3.0, capacity=5.0, x_prime=np.array([2.0, 4.0]))
        d = event_time_derivative(_event(EventKind.BUFFER_EMPTY), ctx, 2)
        np.testing.assert_allclose(d.tau_prime, [1.0, 2.0])

    def test_timeout_start(self):
        """tau' = (e_n alpha_tilde - x_tilde') / (alpha_tilde - B)."""
        ctx = _context(alpha_tilde=6.0, capacity=4.0, x_tilde_prime=np.array([1.0, 2.0]))
        d = event_time_derivative(_event(EventKind.TIMEOUT_START, node=1), ctx, 2)
        np.testing.assert_allclose(d.tau_prime, [-0.5, 2.0])

    def test_timeout_end_uses_same_formula(self):
        ctx = _context(alpha_tilde=2.0, capacity=4.0, x_tilde_prime=np.array([1.0, 0.0]))
        d = event_time_derivative(_event(EventKind.TIMEOUT_END, node=0), ctx, 2)
        np.testing.assert_allclose(d.tau_prime, [-0.5, 0.0])

    def test_availability_jump(self):
        ctx = _context(
            capacity=4.0,
            trigger_tau_prime=np.array([0.5, 1.0]),
            trigger_x_prime=np.array([1.0, 0.0]),
            trigger_alpha_total=2.0,
        )
        d = event_time_derivative(_event(EventKind.AVAILABILITY_JUMP, node=0, trigger=2), ctx, 2)
        np.testing.assert_allclose(d.tau_prime, [0.5, 0.5])

    def test_feedback_jump(self):
        ctx = _context(trigger_tau_prime=np.array([0.5, 1.0]))
        d = event_time_derivative(_event(EventKind.FEEDBACK_JUMP, node=0, trigger=2), ctx, 2)
        np.testing.assert_allclose(d.tau_prime, [1.5, 1.0])

    def test_induced_event_without_trigger(self):
        with self.assertRaises(ModelViolationError):
            event_time_derivative(_event(EventKind.FEEDBACK_JUMP, node=0), _context(), 2)

    def test_degenerate_denominator(self):
        ctx = _context(alpha_total=4.0, capacity=4.0, x_prime=np.array([1.0, 0.0]))
        with self.assertRaises(DegenerateEventError):
            event_time_derivative(_event(EventKind.BUFFER_EMPTY), ctx, 2)
        with self.assertRaises(DegenerateEventError):
            event_time_derivative(_event(EventKind.BUFFER_FILL), _context(ramp_total=0.0), 2)

    def test_tracker_flags_degenerate_path(self):
        tracker = IpaTracker(2, -1.0, 1.0, 0.1)
        ctx = _context(alpha_total=4.0, capacity=4.0)
        tau_prime = tracker.event_derivative(_event(EventKind.BUFFER_EMPTY), ctx)
        self.assertTrue(np.all(np.isnan(tau_prime)))
        self.assertTrue(tracker.degenerate)
        self.assertIn("event 5", tracker.note)

    def test_state_jumps(self):
        ipa = IpaState(np.ones((2, 2)), np.array([1.0, 2.0]))
        tau_prime = EventDerivative(np.array([0.5, -1.0]))

        out = apply_state_jump(_event(EventKind.TIMEOUT_START, node=1), ipa, tau_prime, jump=2.0)
        np.testing.assert_array_equal(out.alpha_prime[1], [0.0, 0.0])
        np.testing.assert_array_equal(out.alpha_prime[0], [1.0, 1.0])
        np.testing.assert_allclose(out.x_prime, [2.0, 0.0])

        out = apply_state_jump(_event(EventKind.TIMEOUT_END, node=0), ipa, tau_prime, 0.0, ramp_rate=2.0)
        np.testing.assert_allclose(out.alpha_prime[0], [0.0, 3.0])

        out = apply_state_jump(_event(EventKind.BUFFER_EMPTY), ipa, tau_prime, 0.0)
        np.testing.assert_array_equal(out.x_prime, [0.0, 0.0])
        np.testing.assert_array_equal(ipa.x_prime, [1.0, 2.0])

    def test_waiting_time_derivative(self):
        np.testing.assert_allclose(waiting_time_derivative(np.array([2.0, 4.0]), 4.0), [0.5, 1.0])
        with self.assertRaises(ModelViolationError):
            waiting_time_derivative(np.zeros(2), 0.0)

    def test_delayed_derivative_counts_fixed_jump(self):
        """A rate jump at t = 0 inside the shifted window enters the own-threshold term."""
        alpha = PiecewiseSignal.from_steps([-5.0, 0.0], [1.0, 3.0], -5.0, 10.0)
        zeros = PiecewiseSignal.constant(0.0, -5.0, 10.0)
        self.assertAlmostEqual(integrate_delayed_alpha_derivative(0.5, 2.0, 1.0, zeros, alpha, True), -2.0)
        self.assertEqual(integrate_delayed_alpha_derivative(0.5, 2.0, 1.0, zeros, alpha, False), 0.0)
        self.assertEqual(integrate_delayed_alpha_derivative(2.0, 2.0, 1.0, zeros, alpha, True), 0.0)

    def test_delayed_derivative_pointwise(self):
        alpha = PiecewiseSignal(-5.0)
        alpha.append(10.0, 1.0, 0.5)
        alpha_prime = PiecewiseSignal.constant(2.0, -5.0, 10.0)
        self.assertAlmostEqual(delayed_alpha_derivative(3.0, 1.0, alpha_prime, alpha, True), 1.5)
        self.assertEqual(delayed_alpha_derivative(3.0, 1.0, alpha_prime, alpha, False), 2.0)


class TestGoodput(unittest.TestCase):
    """Tests for goodput accumulation and path averaging."""

    def setUp(self):
        self.alpha = [PiecewiseSignal.constant(2.0, -5.0, 10.0)]
        self.alpha_prime_hist = [[PiecewiseSignal.constant(0.5, -5.0, 10.0)]]

    def test_interval_without_timeout(self):
        acc = GoodputAccumulator.empty(1)
        accumulate_interval(acc, 0, 0.0, 3.0, [False], [1.0], self.alpha, np.array([[0.5]]), self.alpha_prime_hist)
        self.assertAlmostEqual(acc.goodput, 6.0)
        self.assertAlmostEqual(acc.grad[0, 0], 1.5)
        self.assertEqual(acc.omega, [[]])

    def test_interval_in_timeout(self):
        """Retransmitted volume counts twice against goodput."""
        acc = GoodputAccumulator.empty(1)
        accumulate_interval(acc, 4, 0.0, 3.0, [True], [1.0], self.alpha, np.array([[0.5]]), self.alpha_prime_hist)
        self.assertAlmostEqual(acc.goodput, 6.0 - 12.0)
        self.assertAlmostEqual(acc.grad[0, 0], 1.5 - 3.0)
        self.assertEqual(acc.omega, [[4]])

    def test_event_terms(self):
        acc = GoodputAccumulator.empty(1)
        ev = EventRecord(k=3, tau=2.0, kind=EventKind.TIMEOUT_START, node=0, tau_prime=np.array([2.0]))
        accumulate_event_terms(
            acc, ev, np.array([2.0]), np.array([3.0]), np.array([0.5]),
            np.array([1.0]), np.array([1.0]), [False], [True],
        )
        self.assertAlmostEqual(acc.grad[0, 0], 2.5 * 2.0 + 2.0 * 1.0 * 2.0)

    def test_event_terms_skip_fixed_events(self):
        acc = GoodputAccumulator.empty(1)
        ev = EventRecord(k=1, tau=0.0, kind=EventKind.B_JUMP, tau_prime=np.zeros(1))
        accumulate_event_terms(
            acc, ev, np.zeros(1), np.array([3.0]), np.array([0.5]),
            np.array([1.0]), np.array([1.0]), [True], [True],
        )
        self.assertEqual(acc.grad[0, 0], 0.0)

    def _results(self):
        return [
            PathResult(1, 1.0, np.array([0.4, 0.6]), np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([1.0, 2.0])),
            PathResult(2, 3.0, np.array([1.0, 2.0]), np.array([[3.0, 0.0], [0.0, 4.0]]), np.array([3.0, 4.0])),
            PathResult(3, 99.0, np.zeros(2), np.zeros((2, 2)), np.zeros(2), degenerate=True),
        ]

    def test_summarize_global(self):
        est = summarize_paths(self._results(), "global")
        self.assertEqual(est.goodput_mean, 2.0)
        self.assertAlmostEqual(est.goodput_stderr, 1.0)
        np.testing.assert_allclose(est.grad, [2.0, 3.0])
        np.testing.assert_allclose(est.grad_stderr, [1.0, 1.0])
        self.assertEqual(est.n_paths, 2)
        self.assertEqual(est.n_degenerate, 1)

    def test_summarize_local(self):
        est = summarize_paths(self._results(), "local")
        np.testing.assert_allclose(est.grad, [2.0, 3.0])
        self.assertEqual(est.mode, "local")

    def test_summarize_errors(self):
        with self.assertRaises(EstimationError):
            summarize_paths([])
        with self.assertRaises(EstimationError):
            summarize_paths(self._results()[2:])

    def test_single_path_has_zero_stderr(self):
        est = summarize_paths(self._results()[:1])
        self.assertEqual(est.goodput_stderr, 0.0)


class TestOracle(unittest.TestCase):
    """Tests for the finite-difference oracle."""

    @classmethod
    def setUpClass(cls):
        cls.no_timeout = load_scenario(SCENARIOS / "no_timeout.json")
        cls.sanity = load_scenario(SCENARIOS / "sanity.json")

    def test_default_delta(self):
        self.assertEqual(default_delta(0.5), 1e-4)
        self.assertAlmostEqual(default_delta(3.0), 3e-4)

    def test_relative_error(self):
        self.assertEqual(relative_error(1.0, 1.0, 0.0), 0.0)
        self.assertAlmostEqual(relative_error(1.1, 1.0, 0.0), 0.1)
        self.assertAlmostEqual(relative_error(1e-8, 0.0, 0.0), 1e-2)

    def test_fd_gradient_without_timeouts(self):
        fd, stable = fd_gradient(self.no_timeout, 0, 1)
        self.assertEqual(fd, 0.0)
        self.assertTrue(stable)

    def test_compare_without_timeouts_passes(self):
        report = compare_ipa_fd(self.no_timeout, [0, 1])
        self.assertEqual(len(report.rows), 4)
        self.assertTrue(report.passed)
        self.assertEqual(report.max_rel_error, 0.0)
        self.assertIn("PASS", report.to_string())

    def test_compare_needs_seeds(self):
        with self.assertRaises(EstimationError):
            compare_ipa_fd(self.no_timeout, [])

    def test_perturbed_pair_rejects_bad_input(self):
        with self.assertRaises(EstimationError):
            perturbed_pair(self.sanity, 7, 3, 1e-4)
        with self.assertRaises(EstimationError):
            perturbed_pair(self.sanity, 7, 0, 0.0)

    def test_report_verdicts(self):
        ok = OracleRow(seed=1, j=0, ipa=1.0, fd=1.0, rel_error=0.0, order_stable=True, degenerate=False)
        unstable = OracleRow(seed=2, j=0, ipa=1.0, fd=5.0, rel_error=0.8, order_stable=False, degenerate=False)
        self.assertTrue(OracleReport(rows=[ok] * 4 + [unstable]).passed)
        self.assertFalse(OracleReport(rows=[ok, unstable, unstable]).passed)
        self.assertFalse(OracleReport(rows=[]).passed)
        bad = OracleRow(seed=3, j=0, ipa=1.0, fd=1.5, rel_error=0.33, order_stable=True, degenerate=False)
        self.assertFalse(OracleReport(rows=[ok, bad]).passed)

    def test_ipa_matches_fd_across_feedback_jumps(self):
        """Paths with many [gamma jump] events agree with forward differences."""
        two_node = load_scenario(SCENARIOS / "two_node.json")
        rows = compare_ipa_fd(self.sanity, [3, 8, 11, 13]).rows + compare_ipa_fd(two_node, [0]).rows
        counted = [r for r in rows if r.order_stable and not r.degenerate]
        self.assertTrue(counted)
        for row in counted:
            with self.subTest(seed=row.seed, j=row.j):
                self.assertLessEqual(row.rel_error, 2e-2, (row.ipa, row.fd))

    def test_richardson_sequence_approaches_ipa(self):
        """On an order-stable path the FD error shrinks with the step."""
        delta = default_delta(self.sanity.thetas[0])
        for seed in range(8):
            nominal, perturbed = perturbed_pair(self.sanity, seed, 0, delta)
            if order_stable(nominal, perturbed) and not nominal.result.degenerate:
                break
        else:
            self.fail("no order-stable sanity path")
        values = richardson_sequence(self.sanity, seed, 0, delta, halvings=2)
        self.assertEqual(values.shape, (3,))
        self.assertEqual(values[0], fd_gradient(self.sanity, seed, 0, delta)[0])
        errors = np.abs(values - nominal.result.total_grad[0])
        floor = 1e-6 * (1.0 + abs(nominal.result.goodput))
        self.assertLessEqual(errors[-1], 0.5 * errors[0] + floor, errors)


class TestOptimizer(unittest.TestCase):
    """Tests for gradient estimation, sweeps and the ascent loop."""

    @classmethod
    def setUpClass(cls):
        cls.no_timeout = load_scenario(SCENARIOS / "no_timeout.json")
        cls.sanity = load_scenario(SCENARIOS / "sanity.json")

    def test_project(self):
        np.testing.assert_array_equal(project(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_step_schedule(self):
        cfg = OptimizerConfig(step_size=0.1, decay=50.0)
        self.assertAlmostEqual(cfg.step(0), 0.1)
        self.assertAlmostEqual(cfg.step(50), 0.05)
        self.assertEqual(OptimizerConfig(step_size=0.1, schedule="constant").step(99), 0.1)

    def test_single_path_estimate_matches_path(self):
        est = gradient_estimate(self.sanity, [7])
        traj = run_path(self.sanity, 7)
        np.testing.assert_allclose(est.grad, traj.result.total_grad, rtol=1e-12)
        self.assertEqual(est.goodput_mean, traj.result.goodput)

    def test_estimate_modes(self):
        for mode in ("global", "local"):
            est = gradient_estimate(self.no_timeout, [0, 1], mode=mode)
            np.testing.assert_array_equal(est.grad, [0.0, 0.0])
        with self.assertRaises(EstimationError):
            gradient_estimate(self.no_timeout, [0], mode="sideways")
        with self.assertRaises(EstimationError):
            gradient_estimate(self.no_timeout, [])

    def test_optimize_stops_at_stationary_point(self):
        cfg = OptimizerConfig(step_size=0.5, paths_per_iteration=2, max_iterations=5, master_seed=9)
        result = optimize(self.no_timeout, cfg)
        self.assertTrue(result.converged)
        self.assertEqual(len(result.history), 1)
        np.testing.assert_array_equal(result.final.thetas, [50.0, 50.0])

    def test_optimize_is_reproducible(self):
        cfg = OptimizerConfig(step_size=0.05, paths_per_iteration=2, max_iterations=2, master_seed=4)
        first = optimize(self.sanity, cfg)
        second = optimize(self.sanity, cfg)
        self.assertEqual(
            [h.thetas.tolist() for h in first.history],
            [h.thetas.tolist() for h in second.history],
        )
        self.assertTrue(all(h.thetas[0] >= 0.0 for h in first.history))

    def test_interior_thetas(self):
        np.testing.assert_array_equal(interior_thetas([0.0, 2.0]), [BOUNDARY_OFFSET, 2.0])
        np.testing.assert_array_equal(interior_thetas([1.0]), [1.0])

    def test_boundary_gradient_is_one_sided(self):
        """At theta = 0 every path would be degenerate; the right derivative is used instead."""
        at_zero = gradient_estimate(self.sanity.with_thetas([0.0]), [1, 2, 3])
        inside = gradient_estimate(self.sanity.with_thetas([BOUNDARY_OFFSET]), [1, 2, 3])
        np.testing.assert_array_equal(at_zero.grad, inside.grad)
        self.assertLess(at_zero.n_degenerate, 3)

    def test_optimize_from_boundary(self):
        cfg = OptimizerConfig(step_size=0.05, paths_per_iteration=4, max_iterations=3, master_seed=1)
        result = optimize(self.sanity.with_thetas([0.0]), cfg)
        self.assertEqual(result.history[0].thetas[0], 0.0)
        self.assertGreater(result.history[0].grad[0], 0.0)
        self.assertGreater(len(result.history), 1)
        self.assertGreater(result.history[1].thetas[0], 0.0)
        self.assertTrue(all(h.thetas[0] >= 0.0 for h in result.history))

    def test_threshold_grid(self):
        grid = threshold_grid(self.no_timeout, [1.0, 2.0], node=1)
        np.testing.assert_array_equal(grid[0], [50.0, 1.0])
        np.testing.assert_array_equal(grid[1], [50.0, 2.0])
        grid = threshold_grid(self.no_timeout, [3.0])
        np.testing.assert_array_equal(grid[0], [3.0, 3.0])
        with self.assertRaises(EstimationError):
            threshold_grid(self.no_timeout, [-1.0])
        with self.assertRaises(EstimationError):
            threshold_grid(self.no_timeout, [1.0], node=2)

    def test_sweep(self):
        points = sweep_thresholds(self.no_timeout, threshold_grid(self.no_timeout, [40.0, 60.0]), [0])
        self.assertEqual(len(points), 2)
        for p in points:
            self.assertAlmostEqual(p.goodput_mean, 80.0, delta=1e-9)
        with self.assertRaises(EstimationError):
            sweep_thresholds(self.no_timeout, [], [0])


class TestRunner(unittest.TestCase):
    """Tests for fanning paths out to workers."""

    def test_resolve_jobs(self):
        self.assertEqual(resolve_jobs(3), 3)
        self.assertEqual(resolve_jobs(-2), 1)
        self.assertGreaterEqual(resolve_jobs(0), 1)
        self.assertGreaterEqual(resolve_jobs(None), 1)

    def test_parallel_matches_serial(self):
        """Results come back in seed order whatever the worker count."""
        s = load_scenario(SCENARIOS / "sanity.json")
        serial = map_paths(path_result, s, [1, 2, 3], jobs=1)
        parallel = map_paths(path_result, s, [1, 2, 3], jobs=2)
        self.assertEqual([r.seed for r in parallel], [1, 2, 3])
        self.assertEqual([r.goodput for r in parallel], [r.goodput for r in serial])

    def test_empty_seeds(self):
        s = load_scenario(SCENARIOS / "sanity.json")
        self.assertEqual(map_paths(path_result, s, [], jobs=4), [])


class TestHasher(unittest.TestCase):
    """Tests for the hasher module."""

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def test_compute_file_hash(self):
        """Test SHA-256 hash computation of a file."""
        content = b"t,x\n0,1\n"
        file_path = Path(self.tmpdir) / "test.csv"
        file_path.write_bytes(content)
        self.assertEqual(compute_file_hash(file_path), hashlib.sha256(content).hexdigest())

    def test_compute_file_hash_missing(self):
        with self.assertRaises(FileNotFoundError):
            compute_file_hash(Path(self.tmpdir) / "nonexistent.csv")

    def test_canonicalize_config_deterministic(self):
        config1 = {"b": 2, "a": 1, "c": {"z": 3, "y": 4}}
        config2 = {"a": 1, "c": {"y": 4, "z": 3}, "b": 2}
        self.assertEqual(canonicalize_config(config1), canonicalize_config(config2))

    def test_scenario_hash_ignores_key_order(self):
        data = _scenario_dict()
        reordered = dict(reversed(list(data.items())))
        self.assertEqual(scenario_hash(scenario_from_dict(data)), scenario_hash(scenario_from_dict(reordered)))
        other = scenario_from_dict(_scenario_dict(thetas=[1.5]))
        self.assertNotEqual(scenario_hash(scenario_from_dict(data)), scenario_hash(other))

    def test_run_hash(self):
        digest = "a" * 64
        expected = hashlib.sha256((digest + "gradient" + "1,2,3").encode()).hexdigest()
        self.assertEqual(run_hash(digest, "gradient", [1, 2, 3]), expected)
        self.assertNotEqual(run_hash(digest, "gradient", [1, 2]), expected)


class TestExporter(unittest.TestCase):
    """Tests for CSV and manifest output."""

    @classmethod
    def setUpClass(cls):
        cls.sanity = load_scenario(SCENARIOS / "sanity.json")
        cls.traj = run_path(cls.sanity, 7)

    def setUp(self):
        self.tmpdir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def test_events_frame(self):
        df = events_frame(self.traj)
        self.assertEqual(list(df.columns), ["k", "tau", "kind", "node", "trigger", "tau_prime_1"])
        self.assertEqual(df["kind"].iloc[0], "start")
        self.assertEqual(df["kind"].iloc[-1], "end")
        self.assertTrue(pd.isna(df["node"].iloc[0]))
        starts = df[df["kind"] == "w>theta"]
        self.assertTrue((starts["node"] == 1).all())

    def test_trajectory_frame(self):
        df = trajectory_frame(self.traj, dt=0.5)
        self.assertEqual(list(df.columns), ["t", "alpha_1", "x", "w", "gamma_1", "beta_1"])
        self.assertEqual(df["t"].iloc[0], 0.0)
        self.assertEqual(df["t"].iloc[-1], self.sanity.horizon)
        self.assertTrue((df["x"] >= 0.0).all())
        self.assertTrue((df["w"] >= 0.0).all())
        self.assertTrue(df["t"].is_monotonic_increasing)

    def test_path_results_frame(self):
        df = path_results_frame([self.traj.result], 1)
        self.assertEqual(
            list(df.columns), ["seed", "G", "G_1", "dG1_dtheta1", "dG_dtheta_1", "dGn_dthetan_1", "degenerate"]
        )
        self.assertEqual(df["seed"].iloc[0], 7)
        self.assertEqual(df["dG1_dtheta1"].iloc[0], self.traj.result.grad[0, 0])

    def test_path_results_frame_gradient_matrix(self):
        """Every dG_n/dtheta_j gets its own column, row-major."""
        grad = np.array([[1.0, 2.0], [3.0, 4.0]])
        result = PathResult(5, 10.0, np.array([4.0, 6.0]), grad, grad.sum(axis=0))
        df = path_results_frame([result], 2)
        self.assertEqual(list(df.columns), [
            "seed", "G", "G_1", "G_2",
            "dG1_dtheta1", "dG1_dtheta2", "dG2_dtheta1", "dG2_dtheta2",
            "dG_dtheta_1", "dG_dtheta_2", "dGn_dthetan_1", "dGn_dthetan_2", "degenerate",
        ])
        row = df.iloc[0]
        self.assertEqual(row["dG1_dtheta2"], 2.0)
        self.assertEqual(row["dG2_dtheta1"], 3.0)
        self.assertEqual(row["dG_dtheta_1"], 4.0)
        self.assertEqual(row["dGn_dthetan_2"], 4.0)

    def test_oracle_frame_is_one_based(self):
        row = OracleRow(seed=1, j=0, ipa=1.0, fd=1.0, rel_error=0.0, order_stable=True, degenerate=False)
        df = oracle_frame(OracleReport(rows=[row]))
        self.assertEqual(df["j"].iloc[0], 1)

    def test_iterates_frame(self):
        cfg = OptimizerConfig(paths_per_iteration=1, max_iterations=1)
        result = optimize(self.sanity, cfg)
        df = iterates_frame(result.history, 1)
        self.assertEqual(
            list(df.columns),
            ["iter", "theta_1", "G_mean", "G_stderr", "grad_1", "grad_stderr_1", "step", "n_degenerate"],
        )

    def test_write_frame_is_byte_stable(self):
        first = write_frame(events_frame(self.traj), self.tmpdir / "a" / "events.csv")
        second = write_frame(events_frame(run_path(self.sanity, 7)), self.tmpdir / "b" / "events.csv")
        self.assertEqual(first.read_bytes(), second.read_bytes())
        back = pd.read_csv(first, float_precision="round_trip")
        self.assertEqual(back["tau"].tolist(), [ev.tau for ev in self.traj.events])

    def test_manifest(self):
        path = write_frame(events_frame(self.traj), self.tmpdir / "events.csv")
        manifest_path = write_manifest(self.tmpdir, "simulate", self.sanity, [7], [path])
        manifest = read_json(manifest_path)
        self.assertEqual(manifest["command"], "simulate")
        self.assertEqual(manifest["seeds"], [7])
        self.assertEqual(manifest["scenario_hash"], scenario_hash(self.sanity))
        self.assertEqual(manifest["files"]["events.csv"], compute_file_hash(path))


class TestFileUtils(unittest.TestCase):
    """Tests for JSON and directory helpers."""

    def setUp(self):
        self.tmpdir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def test_ensure_directory(self):
        path = ensure_directory(self.tmpdir / "a" / "b")
        self.assertTrue(path.is_dir())

    def test_json_roundtrip(self):
        path = self.tmpdir / "sub" / "data.json"
        write_json(path, {"b": 1, "a": [1.5, 2]})
        self.assertEqual(read_json(path), {"a": [1.5, 2], "b": 1})
        text = path.read_text()
        self.assertTrue(text.endswith("\n"))
        self.assertLess(text.index('"a"'), text.index('"b"'))

    def test_json_numpy_values(self):
        path = self.tmpdir / "np.json"
        write_json(path, {"thetas": np.array([1.0, 2.5]), "seed": np.int64(7)})
        self.assertEqual(read_json(path), {"seed": 7, "thetas": [1.0, 2.5]})

    def test_json_rejects_nan_and_duplicates(self):
        path = self.tmpdir / "bad.json"
        path.write_text('{"horizon": NaN}')
        with self.assertRaises(ValueError):
            read_json(path)
        path.write_text('{"horizon": 1, "horizon": 2}')
        with self.assertRaises(ValueError):
            read_json(path)
        with self.assertRaises(ScenarioParseError) as ctx:
            load_scenario(path)
        self.assertIn("duplicate key 'horizon'", str(ctx.exception))


class TestCli(unittest.TestCase):
    """Tests for the command-line interface."""

    def setUp(self):
        self.tmpdir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def _run(self, *argv):
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            return main(list(argv))

    def test_no_command(self):
        self.assertEqual(self._run(), 1)

    def test_missing_scenario_flag(self):
        self.assertEqual(self._run("gradient"), 1)

    def test_unknown_scenario_file(self):
        self.assertEqual(self._run("simulate", "--scenario", str(self.tmpdir / "nope.json")), 1)

    def test_invalid_scenario(self):
        path = self.tmpdir / "bad.json"
        write_json(path, _scenario_dict(thetas=[-1.0]))
        self.assertEqual(self._run("simulate", "--scenario", str(path), "--out", str(self.tmpdir)), 1)

    def test_simulate_writes_outputs(self):
        out = self.tmpdir / "run"
        code = self._run("simulate", "--scenario", str(SCENARIOS / "sanity.json"), "--seed", "7", "--out", str(out))
        self.assertEqual(code, 0)
        for name in ("trajectory.csv", "events.csv", "derivatives.csv", "manifest.json"):
            self.assertTrue((out / name).is_file(), name)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["seeds"], [7])

    def test_rerun_is_byte_identical(self):
        scenario = str(SCENARIOS / "sanity.json")
        for name in ("a", "b"):
            self.assertEqual(self._run("simulate", "-s", scenario, "--seed", "7", "-o", str(self.tmpdir / name)), 0)
        for path in sorted((self.tmpdir / "a").iterdir()):
            self.assertEqual(path.read_bytes(), (self.tmpdir / "b" / path.name).read_bytes(), path.name)

    def test_gradient(self):
        code = self._run("gradient", "-s", str(SCENARIOS / "no_timeout.json"), "--seeds", "3", "-o", str(self.tmpdir))
        self.assertEqual(code, 0)
        df = pd.read_csv(self.tmpdir / "gradients.csv")
        self.assertEqual(df["seed"].tolist(), [0, 1, 2])
        summary = pd.read_csv(self.tmpdir / "gradient_summary.csv")
        self.assertEqual(summary["n_paths"].iloc[0], 3)

    def test_check_fd_pass_and_fail(self):
        code = self._run("check-fd", "-s", str(SCENARIOS / "no_timeout.json"), "--seeds", "2", "-o", str(self.tmpdir))
        self.assertEqual(code, 0)
        self.assertTrue((self.tmpdir / "fd_report.csv").is_file())
        code = self._run(
            "check-fd", "-s", str(SCENARIOS / "sanity.json"), "--seeds", "2", "--tol", "0", "-o", str(self.tmpdir),
        )
        self.assertEqual(code, 2)

    def test_sweep(self):
        code = self._run(
            "sweep", "-s", str(SCENARIOS / "no_timeout.json"), "--values", "40,60", "--seeds", "2",
            "-o", str(self.tmpdir),
        )
        self.assertEqual(code, 0)
        df = pd.read_csv(self.tmpdir / "sweep.csv")
        self.assertEqual(df["theta_1"].tolist(), [40.0, 60.0])

    def test_sweep_needs_grid(self):
        self.assertEqual(self._run("sweep", "-s", str(SCENARIOS / "no_timeout.json")), 1)

    def test_optimize(self):
        code = self._run(
            "optimize", "-s", str(SCENARIOS / "no_timeout.json"), "--iterations", "3", "-o", str(self.tmpdir),
        )
        self.assertEqual(code, 0)
        optimized = load_scenario(self.tmpdir / "optimized_scenario.json")
        self.assertEqual(optimized.thetas, (50.0, 50.0))
        self.assertEqual(len(pd.read_csv(self.tmpdir / "iterates.csv")), 1)

    def test_simulation_error_exit_code(self):
        with mock.patch("sfmipa.cli.main.run_path", side_effect=SimulationError("boom")):
            code = self._run("simulate", "-s", str(SCENARIOS / "sanity.json"), "-o", str(self.tmpdir))
        self.assertEqual(code, 3)


if __name__ == "__main__":
    unittest.main()
