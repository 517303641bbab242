"""Report data classes for estimates, oracle checks and optimization runs."""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


def _vec(values: np.ndarray, fmt: str = "{:.6g}") -> str:
    return "(" + ", ".join(fmt.format(v) for v in values) + ")"


@dataclass
class GradientEstimate:
    """Sample mean of per-path goodput and gradients over seeds.

    Attributes:
        mode: ``global`` (dG/dtheta_j) or ``local`` (dG_j/dtheta_j).
        goodput_mean: Mean goodput G.
        goodput_stderr: Standard error of G.
        goodput_by_node: Mean G_n.
        grad: Mean gradient estimate.
        grad_stderr: Standard error of each component.
        n_paths: Paths used.
        n_degenerate: Paths excluded as degenerate.
    """
    mode: str
    goodput_mean: float
    goodput_stderr: float
    goodput_by_node: np.ndarray
    grad: np.ndarray
    grad_stderr: np.ndarray
    n_paths: int
    n_degenerate: int = 0

    def summary(self) -> str:
        return "\n".join([
            f"Goodput:   {self.goodput_mean:.6g} +/- {self.goodput_stderr:.2g}",
            f"Per node:  {_vec(self.goodput_by_node)}",
            f"Gradient ({self.mode}): {_vec(self.grad)}",
            f"Stderr:    {_vec(self.grad_stderr, '{:.2g}')}",
            f"Paths:     {self.n_paths} used, {self.n_degenerate} degenerate",
        ])


@dataclass
class OracleRow:
    """IPA against finite difference for one (seed, theta_j)."""
    seed: int
    j: int
    ipa: float
    fd: float
    rel_error: float
    order_stable: bool
    degenerate: bool
    events_matched: int = 0
    events_within_tol: int = 0

    @property
    def counted(self) -> bool:
        return self.order_stable and not self.degenerate


@dataclass
class OracleReport:
    """Outcome of a finite-difference comparison over seeds."""
    rows: List[OracleRow] = field(default_factory=list)
    tol_rel: float = 2e-2
    min_stable_fraction: float = 0.8
    min_event_fraction: float = 0.99

    @property
    def stable_fraction(self) -> float:
        if not self.rows:
            return 0.0
        return sum(1 for r in self.rows if r.order_stable) / len(self.rows)

    @property
    def max_rel_error(self) -> float:
        errors = [r.rel_error for r in self.rows if r.counted]
        return max(errors) if errors else 0.0

    @property
    def event_fraction(self) -> float:
        matched = sum(r.events_matched for r in self.rows if r.counted)
        if matched == 0:
            return 1.0
        return sum(r.events_within_tol for r in self.rows if r.counted) / matched

    @property
    def passed(self) -> bool:
        if not self.rows or self.stable_fraction < self.min_stable_fraction:
            return False
        if not any(r.counted for r in self.rows):
            return False
        return self.max_rel_error <= self.tol_rel and self.event_fraction >= self.min_event_fraction

    def to_string(self) -> str:
        lines = [
            "=" * 60,
            "SFMIPA Finite-Difference Check",
            "=" * 60,
            f"{'seed':>8} {'j':>3} {'ipa':>14} {'fd':>14} {'rel.err':>10}  status",
        ]
        for r in self.rows:
            if r.degenerate:
                status = "degenerate"
            elif not r.order_stable:
                status = "order change"
            else:
                status = "ok" if r.rel_error <= self.tol_rel else "FAIL"
            lines.append(
                f"{r.seed:>8} {r.j + 1:>3} {r.ipa:>14.6g} {r.fd:>14.6g} {r.rel_error:>10.2e}  {status}"
            )
        lines += [
            "",
            f"Order-stable paths: {self.stable_fraction:.0%} (need {self.min_stable_fraction:.0%})",
            f"Max relative error: {self.max_rel_error:.3e} (tolerance {self.tol_rel:.1e})",
            f"Event times within tolerance: {self.event_fraction:.2%}",
            f"Result: {'PASS' if self.passed else 'FAIL'}",
            "=" * 60,
        ]
        return "\n".join(lines)


@dataclass
class FcfsReport:
    """Outcome of the per-class FCFS verification pass."""
    max_wait_error: float
    order_preserved: bool
    max_capacity_error: float
    max_class_mass_error: float
    mass_balance_error: float
    n_samples: int

    def summary(self) -> str:
        return "\n".join([
            f"Per-class wait error:  {self.max_wait_error:.3e}",
            f"Order preserved:       {self.order_preserved}",
            f"Capacity error (rel):  {self.max_capacity_error:.3e}",
            f"Class mass residual:   {self.max_class_mass_error:.3e}",
            f"Mass balance residual: {self.mass_balance_error:.3e}",
        ])


@dataclass
class IterateRecord:
    """One iteration of the threshold optimizer."""
    iteration: int
    thetas: np.ndarray
    goodput_mean: float
    goodput_stderr: float
    grad: np.ndarray
    grad_stderr: np.ndarray
    step: float
    n_degenerate: int = 0

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


@dataclass
class SweepPoint:
    """Mean goodput at one threshold vector."""
    thetas: np.ndarray
    goodput_mean: float
    goodput_stderr: float
    grad: np.ndarray
    n_degenerate: int = 0


@dataclass
class OptimizationResult:
    """Iterate history plus the stopping reason."""
    history: List[IterateRecord]
    converged: bool
    reason: str = ""

    @property
    def final(self) -> Optional[IterateRecord]:
        return self.history[-1] if self.history else None
