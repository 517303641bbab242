"""CSV and manifest output for every CLI command.

Column order is fixed by construction and floats are written with 17
significant digits, so identical runs produce byte-identical files.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from sfmipa import __version__
from sfmipa.core.hasher import compute_file_hash, run_hash, scenario_hash
from sfmipa.core.simulator import service_shares
from sfmipa.models.records import PathResult, Trajectory
from sfmipa.models.reports import GradientEstimate, IterateRecord, OracleReport, SweepPoint
from sfmipa.models.scenario import Scenario
from sfmipa.utils.file_utils import ensure_directory, write_json

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


def _nodes(prefix: str, n_nodes: int) -> List[str]:
    return [f"{prefix}_{n + 1}" for n in range(n_nodes)]


def write_frame(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    ensure_directory(path.parent)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n")
    logger.debug("Wrote %d rows to '%s'", len(df), path)
    return path


def trajectory_frame(traj: Trajectory, dt: Optional[float] = None) -> pd.DataFrame:
    """State on the export grid: t, alpha_n, x, w, gamma_n, beta_n (right limits)."""
    n_nodes = traj.scenario.n_nodes
    times = traj.sample_times(dt)
    rows = []
    for t in times:
        t = float(t)
        alpha = [traj.alpha(n, t) for n in range(n_nodes)]
        x = traj.x(t)
        if x > 0.0:
            beta = service_shares(traj.alpha_tilde(t), traj.b_path.eval(t)).tolist()
        else:
            beta = alpha
        gamma = [traj.gamma(n, t) for n in range(n_nodes)]
        rows.append([t, *alpha, x, traj.waiting_time(t), *gamma, *beta])
    columns = ["t", *_nodes("alpha", n_nodes), "x", "w", *_nodes("gamma", n_nodes), *_nodes("beta", n_nodes)]
    return pd.DataFrame(rows, columns=columns)


def derivatives_frame(traj: Trajectory, dt: Optional[float] = None) -> pd.DataFrame:
    """IPA state on the export grid: dalpha_n_j and dx_j."""
    n_nodes = traj.scenario.n_nodes
    names = [f"dalpha_{n + 1}_{j + 1}" for n in range(n_nodes) for j in range(n_nodes)]
    names += [f"dx_{j + 1}" for j in range(n_nodes)]
    times = traj.sample_times(dt)
    data: Dict[str, np.ndarray] = {"t": times}
    for name in names:
        data[name] = traj.signals[name].sample(times)
    return pd.DataFrame(data, columns=["t", *names])


def events_frame(traj: Trajectory) -> pd.DataFrame:
    """Event log with 1-based node numbers and per-threshold tau'."""
    n_nodes = traj.scenario.n_nodes
    df = pd.DataFrame({
        "k": [ev.k for ev in traj.events],
        "tau": [ev.tau for ev in traj.events],
        "kind": [ev.kind.value for ev in traj.events],
        "node": pd.array([None if ev.node is None else ev.node + 1 for ev in traj.events], dtype="Int64"),
        "trigger": pd.array([ev.trigger for ev in traj.events], dtype="Int64"),
    })
    tau_prime = np.array([ev.tau_prime for ev in traj.events]).reshape(len(traj.events), n_nodes)
    for j in range(n_nodes):
        df[f"tau_prime_{j + 1}"] = tau_prime[:, j]
    return df


def _matrix(n_nodes: int) -> List[str]:
    return [f"dG{n + 1}_dtheta{j + 1}" for n in range(n_nodes) for j in range(n_nodes)]


def path_results_frame(results: Sequence[PathResult], n_nodes: int) -> pd.DataFrame:
    """One row per seed: G, G_n, dG_n/dtheta_j (row-major), global and local gradient, degenerate flag."""
    rows = []
    for r in results:
        rows.append([
            r.seed, r.goodput, *r.goodput_by_node, *np.asarray(r.grad).ravel(), *r.total_grad, *r.local_grad,
            r.degenerate,
        ])
    columns = [
        "seed", "G", *_nodes("G", n_nodes), *_matrix(n_nodes), *_nodes("dG_dtheta", n_nodes),
        *_nodes("dGn_dthetan", n_nodes), "degenerate",
    ]
    return pd.DataFrame(rows, columns=columns)


def estimate_frame(est: GradientEstimate) -> pd.DataFrame:
    n_nodes = len(est.grad)
    row = [est.mode, est.goodput_mean, est.goodput_stderr, *est.grad, *est.grad_stderr, est.n_paths, est.n_degenerate]
    columns = [
        "mode", "G_mean", "G_stderr", *_nodes("grad", n_nodes), *_nodes("grad_stderr", n_nodes), "n_paths", "n_degenerate",
    ]
    return pd.DataFrame([row], columns=columns)


def oracle_frame(report: OracleReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            [r.seed, r.j + 1, r.ipa, r.fd, r.rel_error, r.order_stable, r.degenerate, r.events_matched, r.events_within_tol]
            for r in report.rows
        ],
        columns=["seed", "j", "ipa", "fd", "rel_error", "order_stable", "degenerate", "events_matched", "events_within_tol"],
    )


def sweep_frame(points: Sequence[SweepPoint], n_nodes: int) -> pd.DataFrame:
    rows = [[*p.thetas, p.goodput_mean, p.goodput_stderr, *p.grad, p.n_degenerate] for p in points]
    columns = [*_nodes("theta", n_nodes), "G_mean", "G_stderr", *_nodes("grad", n_nodes), "n_degenerate"]
    return pd.DataFrame(rows, columns=columns)


def iterates_frame(history: Sequence[IterateRecord], n_nodes: int) -> pd.DataFrame:
    rows = [
        [h.iteration, *h.thetas, h.goodput_mean, h.goodput_stderr, *h.grad, *h.grad_stderr, h.step, h.n_degenerate]
        for h in history
    ]
    columns = [
        "iter", *_nodes("theta", n_nodes), "G_mean", "G_stderr", *_nodes("grad", n_nodes),
        *_nodes("grad_stderr", n_nodes), "step", "n_degenerate",
    ]
    return pd.DataFrame(rows, columns=columns)


def write_manifest(
    out_dir: Union[str, Path],
    command: str,
    scenario: Scenario,
    seeds: Sequence[int],
    files: Sequence[Path],
) -> Path:
    """Record what a command produced: scenario hash, seeds and output file hashes.

    No timestamps are stored, so the manifest of a rerun is identical.
    """
    out_dir = ensure_directory(out_dir)
    digest = scenario_hash(scenario)
    manifest = {
        "command": command,
        "version": __version__,
        "scenario_hash": digest,
        "run_id": run_hash(digest, command, seeds),
        "seeds": list(seeds),
        "files": {Path(f).name: compute_file_hash(f) for f in files},
    }
    path = out_dir / MANIFEST_NAME
    write_json(path, manifest)
    return path
