"""Scenario data classes for SFMIPA.

A scenario is immutable once loaded; workers receive copies through
pickling and never mutate them.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

PROCESS_KINDS = ("constant", "markov", "schedule")
OPTIMIZER_MODES = ("global", "local")
STEP_SCHEDULES = ("decay", "constant")


@dataclass(frozen=True)
class ProcessSpec:
    """Generator description for one exogenous rate process.

    Attributes:
        kind: ``constant``, ``markov`` or ``schedule``.
        value: Level of a constant process.
        levels: Level set of a Markov-modulated process.
        jump_rate: Total rate of leaving the current level (markov).
        initial: Index of the starting level (markov).
        times: Change times of a deterministic schedule.
        values: Schedule values; ``values[0]`` holds before ``times[0]``.
    """
    kind: str
    value: float = 0.0
    levels: Tuple[float, ...] = ()
    jump_rate: float = 0.0
    initial: int = 0
    times: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def rates(self) -> Tuple[float, ...]:
        """Every rate this process can take."""
        if self.kind == "constant":
            return (self.value,)
        if self.kind == "markov":
            return self.levels
        return self.values

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "markov":
            return {
                "kind": "markov",
                "levels": list(self.levels),
                "jump_rate": self.jump_rate,
                "initial": self.initial,
            }
        return {"kind": "schedule", "times": list(self.times), "values": list(self.values)}


@dataclass(frozen=True)
class PolicyParams:
    """Per-node ramp rates r_n and rate floors alpha_min."""
    ramp_rates: Tuple[float, ...]
    alpha_min: Tuple[float, ...]


@dataclass(frozen=True)
class InitialConditions:
    """Initial rates, buffer content and common waiting time.

    Attributes:
        alpha0: Transmission rates at t = 0.
        x0: Buffer content at t = 0.
        w0: Common waiting time at t = 0; derived from ``x0`` when omitted.
        prehistory_alpha: Constant rates assumed before t = 0 (defaults to ``alpha0``).
    """
    alpha0: Tuple[float, ...]
    x0: float = 0.0
    w0: Optional[float] = None
    prehistory_alpha: Optional[Tuple[float, ...]] = None

    @property
    def prehistory(self) -> Tuple[float, ...]:
        return self.prehistory_alpha if self.prehistory_alpha is not None else self.alpha0

    @property
    def waiting_time(self) -> float:
        """Common waiting time of the head fluid at t = 0."""
        if self.w0 is not None:
            return self.w0
        return self.x0 / sum(self.prehistory)


@dataclass(frozen=True)
class SimulationSettings:
    """Numerical settings of a sample-path run.

    Attributes:
        event_tol: Tie window relative to the horizon (epsilon_event = event_tol * T).
        retention_margin: Extra look-back kept beyond the running maximum wait.
        sample_dt: Export grid step; ``None`` means T / 200.
        scan_step: Bracketing step of the FCFS class-waiting-time search; ``None``
            means one eighth of the searched range.
    """
    event_tol: float = 1e-9
    retention_margin: float = 0.1
    sample_dt: Optional[float] = None
    scan_step: Optional[float] = None


@dataclass(frozen=True)
class OptimizerConfig:
    """Projected stochastic gradient ascent settings."""
    step_size: float = 0.05
    schedule: str = "decay"
    decay: float = 50.0
    paths_per_iteration: int = 20
    max_iterations: int = 200
    stop_grad_norm: float = 1e-6
    mode: str = "global"
    master_seed: int = 0

    def step(self, iteration: int) -> float:
        """Step size eta_i of the given iteration."""
        if self.schedule == "constant":
            return self.step_size
        return self.step_size / (1.0 + iteration / self.decay)


@dataclass(frozen=True)
class Scenario:
    """Full description of one experiment.

    Attributes:
        n_nodes: Number of transmitters N.
        horizon: Simulated horizon T.
        thetas: Timeout thresholds, one per node.
        policy: Ramp and floor parameters.
        lambda_specs: Supply-rate processes, one per node.
        b_spec: Channel capacity process.
        init: Initial conditions.
        seed: Default seed for process realizations.
        settings: Numerical settings.
        optimizer: Ascent settings used by ``optimize``.
    """
    n_nodes: int
    horizon: float
    thetas: Tuple[float, ...]
    policy: PolicyParams
    lambda_specs: Tuple[ProcessSpec, ...]
    b_spec: ProcessSpec
    init: InitialConditions
    seed: int = 0
    settings: SimulationSettings = field(default_factory=SimulationSettings)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    @property
    def theta_max(self) -> float:
        return max(self.thetas)

    @property
    def event_eps(self) -> float:
        return self.settings.event_tol * self.horizon

    @property
    def sample_dt(self) -> float:
        if self.settings.sample_dt:
            return self.settings.sample_dt
        return self.horizon / 200.0 if self.horizon > 0 else 1.0

    def with_thetas(self, thetas: Sequence[float]) -> "Scenario":
        return replace(self, thetas=tuple(float(t) for t in thetas))

    def with_theta(self, j: int, value: float) -> "Scenario":
        thetas = list(self.thetas)
        thetas[j] = float(value)
        return self.with_thetas(thetas)

    def to_dict(self) -> Dict[str, Any]:
        """Plain-JSON form, the same schema ``load_scenario`` reads."""
        init = {"alpha0": list(self.init.alpha0), "x0": self.init.x0}
        if self.init.w0 is not None:
            init["w0"] = self.init.w0
        if self.init.prehistory_alpha is not None:
            init["prehistory_alpha"] = list(self.init.prehistory_alpha)
        return {
            "n_nodes": self.n_nodes,
            "horizon": self.horizon,
            "thetas": list(self.thetas),
            "seed": self.seed,
            "policy": {
                "ramp_rates": list(self.policy.ramp_rates),
                "alpha_min": list(self.policy.alpha_min),
            },
            "lambda_specs": [spec.to_dict() for spec in self.lambda_specs],
            "b_spec": self.b_spec.to_dict(),
            "init": init,
            "simulation": asdict(self.settings),
            "optimizer": asdict(self.optimizer),
        }
