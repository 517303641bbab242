"""CLI entry point for SFMIPA.

Commands:
    sfmipa simulate  --scenario s.json [--seed K]      - One path: trajectory, events, derivatives
    sfmipa gradient  --scenario s.json [--seeds M]     - IPA goodput gradient over M seeds
    sfmipa check-fd  --scenario s.json [--seeds M]     - IPA against CRN finite differences
    sfmipa sweep     --scenario s.json --values a,b,c  - Mean goodput over a threshold grid
    sfmipa optimize  --scenario s.json                 - Projected stochastic gradient ascent

Exit codes: 0 success, 1 usage or validation error, 2 finite-difference
check failed, 3 simulation error.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from sfmipa import __version__
from sfmipa.cli.console import (
    bold,
    dim,
    error,
    fmt_vector,
    info,
    print_banner,
    print_fail,
    print_files,
    print_ok,
    print_section,
    print_warn,
)
from sfmipa.core.exporter import (
    derivatives_frame,
    estimate_frame,
    events_frame,
    iterates_frame,
    oracle_frame,
    path_results_frame,
    sweep_frame,
    trajectory_frame,
    write_frame,
    write_manifest,
)
from sfmipa.core.fcfs import verify_fcfs
from sfmipa.core.goodput import summarize_paths
from sfmipa.core.optimizer import optimize, sweep_thresholds, threshold_grid
from sfmipa.core.oracle import compare_ipa_fd
from sfmipa.core.runner import map_paths
from sfmipa.core.scenario import load_scenario, resolve_seed, save_scenario
from sfmipa.core.simulator import path_result, run_path
from sfmipa.exceptions import (
    EstimationError,
    ModelViolationError,
    OracleFailure,
    ScenarioError,
    SfmError,
    SignalDomainError,
    SimulationError,
)
from sfmipa.models.scenario import OPTIMIZER_MODES, Scenario

logger = logging.getLogger("sfmipa")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ORACLE = 2
EXIT_SIMULATION = 3


class _ArgumentParser(argparse.ArgumentParser):
    """Parser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seeds(args, s: Scenario) -> List[int]:
    base = resolve_seed(args.seed, s)
    return list(range(base, base + args.seeds))


def _out_dir(args) -> Path:
    return Path(args.out)


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("no values given")
    return values


def _range_spec(text: str) -> List[float]:
    parts = text.split(":")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError):
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got '{text}'")
    if len(parts) != 3 or count < 1:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count with count >= 1, got '{text}'")
    return np.linspace(lo, hi, count).tolist()


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got '{text}'")
    return value


# ---- Command Handlers ----

def cmd_simulate(args) -> int:
    """Handle 'sfmipa simulate'."""
    s = load_scenario(args.scenario)
    seed = resolve_seed(args.seed, s)
    traj = run_path(s, seed)
    out = _out_dir(args)
    files = [
        write_frame(trajectory_frame(traj, args.sample_dt), out / "trajectory.csv"),
        write_frame(events_frame(traj), out / "events.csv"),
        write_frame(derivatives_frame(traj, args.sample_dt), out / "derivatives.csv"),
    ]
    write_manifest(out, "simulate", s, [seed], files)

    r = traj.result
    print_section(f"Sample path (seed {seed})")
    print("    Events:    " + bold(str(traj.n_events)))
    print("    Goodput:   " + bold(f"{r.goodput:.6g}") + dim("  per node " + fmt_vector(r.goodput_by_node)))
    print("    dG/dtheta: " + bold(fmt_vector(r.total_grad)))
    if r.degenerate:
        print_warn("degenerate path: " + r.note)
    if args.check_fcfs:
        report = verify_fcfs(traj)
        print_section("FCFS verification")
        for line in report.summary().splitlines():
            print("    " + line)
    print_files(files)
    print()
    return EXIT_OK


def cmd_gradient(args) -> int:
    """Handle 'sfmipa gradient'."""
    s = load_scenario(args.scenario)
    seeds = _seeds(args, s)
    results = map_paths(path_result, s, seeds, args.jobs)
    est = summarize_paths(results, args.mode)
    out = _out_dir(args)
    files = [
        write_frame(path_results_frame(results, s.n_nodes), out / "gradients.csv"),
        write_frame(estimate_frame(est), out / "gradient_summary.csv"),
    ]
    write_manifest(out, "gradient", s, seeds, files)

    print_section(f"Gradient estimate over {len(seeds)} seeds")
    for line in est.summary().splitlines():
        print("    " + line)
    print_files(files)
    print()
    return EXIT_OK


def cmd_check_fd(args) -> int:
    """Handle 'sfmipa check-fd'."""
    s = load_scenario(args.scenario)
    seeds = _seeds(args, s)
    report = compare_ipa_fd(s, seeds, delta=args.delta, tol_rel=args.tol, jobs=args.jobs)
    out = _out_dir(args)
    files = [write_frame(oracle_frame(report), out / "fd_report.csv")]
    write_manifest(out, "check-fd", s, seeds, files)

    print()
    print(report.to_string())
    print_files(files)
    print()
    if not report.passed:
        raise OracleFailure(
            f"finite-difference check failed (max rel. error {report.max_rel_error:.3e}, "
            f"{report.stable_fraction:.0%} order-stable)"
        )
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Handle 'sfmipa sweep'."""
    s = load_scenario(args.scenario)
    seeds = _seeds(args, s)
    node = None if args.node is None else args.node - 1
    grid = threshold_grid(s, args.values if args.values is not None else args.range, node)
    points = sweep_thresholds(s, grid, seeds, jobs=args.jobs)
    out = _out_dir(args)
    files = [write_frame(sweep_frame(points, s.n_nodes), out / "sweep.csv")]
    write_manifest(out, "sweep", s, seeds, files)

    print_section(f"Threshold sweep ({len(points)} points, {len(seeds)} seeds each)")
    for p in points:
        print(f"    theta={fmt_vector(p.thetas, 4)}  G={p.goodput_mean:.6g} +/- {p.goodput_stderr:.2g}")
    print_files(files)
    print()
    return EXIT_OK


def cmd_optimize(args) -> int:
    """Handle 'sfmipa optimize'."""
    s = load_scenario(args.scenario)
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.iterations is not None:
        overrides["max_iterations"] = args.iterations
    if args.step_size is not None:
        overrides["step_size"] = args.step_size
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    cfg = replace(s.optimizer, **overrides)

    result = optimize(s, cfg, jobs=args.jobs)
    final = result.final
    out = _out_dir(args)
    files = [
        write_frame(iterates_frame(result.history, s.n_nodes), out / "iterates.csv"),
        save_scenario(s.with_thetas(final.thetas), out / "optimized_scenario.json"),
    ]
    write_manifest(out, "optimize", s, [cfg.master_seed], files)

    print_section(f"Optimization ({cfg.mode} mode)")
    first = result.history[0]
    print("    Start:     theta=" + fmt_vector(first.thetas, 4) + f"  G={first.goodput_mean:.6g}")
    print("    Final:     theta=" + bold(fmt_vector(final.thetas, 4)) + f"  G={final.goodput_mean:.6g}")
    print("    |grad|:    " + f"{final.grad_norm:.3e}")
    if result.converged:
        print_ok(f"converged after {len(result.history)} iterations ({result.reason})")
    else:
        print_warn(f"stopped: {result.reason}")
    print_files(files)
    print()
    return EXIT_OK


# ---- Parser ----

def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with all subcommands."""
    common = _ArgumentParser(add_help=False)
    common.add_argument("--scenario", "-s", required=True, help="Scenario JSON file")
    common.add_argument("--seed", type=int, default=None,
                        help="Base process seed (default: $SFMIPA_SEED or the scenario seed)")
    common.add_argument("--out", "-o", default=".", help="Output directory (default: .)")
    common.add_argument("--jobs", "-j", type=int, default=1,
                        help="Worker processes for multi-seed work (0 = one per CPU)")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")

    multi = _ArgumentParser(add_help=False)
    multi.add_argument("--seeds", type=_positive_int, default=20,
                       help="Number of seeds: seed, seed+1, ..., seed+N-1 (default: 20)")

    parser = _ArgumentParser(
        prog="sfmipa",
        description="SFMIPA - timeout-controlled stochastic flow model with IPA goodput gradients",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "\nExamples:\n"
            "  sfmipa simulate --scenario scenarios/sanity.json --seed 7 --out run/\n"
            "  sfmipa gradient --scenario scenarios/two_node.json --seeds 50 --mode local\n"
            "  sfmipa check-fd --scenario scenarios/sanity.json --seeds 20\n"
            "  sfmipa sweep --scenario scenarios/sanity.json --range 0.5:4:8\n"
            "  sfmipa optimize --scenario scenarios/optimize.json --jobs 4\n"
        ),
    )
    parser.add_argument("--version", action="version", version=f"sfmipa {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Command")

    p_sim = subparsers.add_parser("simulate", parents=[common], help="Simulate one sample path")
    p_sim.add_argument("--sample-dt", type=float, default=None,
                       help="Export grid step (default: scenario sample_dt or T/200)")
    p_sim.add_argument("--check-fcfs", action="store_true",
                       help="Verify per-class FCFS waiting times on the path")
    p_sim.set_defaults(func=cmd_simulate)

    p_grad = subparsers.add_parser("gradient", parents=[common, multi], help="Estimate the goodput gradient")
    p_grad.add_argument("--mode", choices=OPTIMIZER_MODES, default="global",
                        help="global: dG/dtheta_j; local: dG_j/dtheta_j")
    p_grad.set_defaults(func=cmd_gradient)

    p_fd = subparsers.add_parser("check-fd", parents=[common, multi], help="Compare IPA with finite differences")
    p_fd.add_argument("--delta", type=float, default=None,
                      help="Absolute threshold step (default: 1e-4 * max(theta_j, 1))")
    p_fd.add_argument("--tol", type=float, default=2e-2, help="Relative error tolerance (default: 2e-2)")
    p_fd.set_defaults(func=cmd_check_fd)

    p_sweep = subparsers.add_parser("sweep", parents=[common, multi], help="Sweep timeout thresholds")
    p_sweep.add_argument("--node", type=_positive_int, default=None,
                         help="1-based node to sweep (default: all nodes share the value)")
    grid = p_sweep.add_mutually_exclusive_group(required=True)
    grid.add_argument("--values", type=_float_list, default=None, help="Comma-separated threshold values")
    grid.add_argument("--range", type=_range_spec, default=None, help="lo:hi:count evenly spaced values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_opt = subparsers.add_parser("optimize", parents=[common], help="Optimize thresholds by gradient ascent")
    p_opt.add_argument("--mode", choices=OPTIMIZER_MODES, default=None,
                       help="Override the scenario's optimizer mode")
    p_opt.add_argument("--iterations", type=_positive_int, default=None, help="Maximum iterations")
    p_opt.add_argument("--step-size", type=float, default=None, help="Initial step size eta_0")
    p_opt.set_defaults(func=cmd_optimize)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the CLI; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    level = logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )

    if args.command is None:
        print_banner()
        parser.print_help()
        return EXIT_USAGE

    try:
        return args.func(args)
    except KeyboardInterrupt:
        print()
        print("  " + dim("Cancelled."))
        return 130
    except OracleFailure as e:
        print_fail(str(e))
        return EXIT_ORACLE
    except (ScenarioError, EstimationError) as e:
        print("  " + error("Error:") + " " + str(e), file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, ModelViolationError, SignalDomainError, SfmError) as e:
        logger.debug("Error details:", exc_info=True)
        print("  " + error("Simulation error:") + " " + str(e), file=sys.stderr)
        return EXIT_SIMULATION
    except Exception as e:
        logger.error("Unexpected failure: %s", e, exc_info=True)
        print("  " + error("Error:") + " " + info(type(e).__name__) + " " + str(e), file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
