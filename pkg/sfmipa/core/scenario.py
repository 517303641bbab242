"""Scenario loading, validation and process realization.

Scenarios are JSON documents (schema in README.md). Loading turns syntax
problems into ``ScenarioParseError`` with line and column, and every
violated invariant into ``ScenarioValidationError`` naming it.
Realizations of the exogenous processes depend on (scenario, seed) only, so
nominal and perturbed runs of the finite-difference oracle share them.
"""

import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sfmipa.core.signals import PiecewiseSignal
from sfmipa.exceptions import ScenarioParseError, ScenarioValidationError
from sfmipa.utils.file_utils import read_json, write_json
from sfmipa.models.scenario import (
    OPTIMIZER_MODES,
    PROCESS_KINDS,
    STEP_SCHEDULES,
    InitialConditions,
    OptimizerConfig,
    PolicyParams,
    ProcessSpec,
    Scenario,
    SimulationSettings,
)

logger = logging.getLogger(__name__)

SEED_ENV = "SFMIPA_SEED"
MAX_SEED = 2 ** 64 - 1
W0_REL_TOL = 1e-9


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def load_scenario(path: Union[str, Path]) -> Scenario:
    """Load and validate a scenario file.

    Args:
        path: Path to the JSON scenario.

    Returns:
        The validated Scenario.

    Raises:
        ScenarioParseError: If the file is missing, is not JSON or lacks a field.
        ScenarioValidationError: If an invariant is violated.
    """
    path = Path(path)
    if not path.is_file():
        raise ScenarioParseError("scenario file not found", path=str(path))
    try:
        data = read_json(path)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, path=str(path), line=e.lineno, column=e.colno) from e
    except ValueError as e:
        raise ScenarioParseError(str(e), path=str(path)) from e
    scenario = scenario_from_dict(data, source=str(path))
    logger.info("Loaded scenario '%s' (N=%d, T=%g)", path, scenario.n_nodes, scenario.horizon)
    return scenario


def save_scenario(s: Scenario, path: Union[str, Path]) -> Path:
    """Write ``s`` in the format ``load_scenario`` reads."""
    path = Path(path)
    write_json(path, s.to_dict())
    logger.debug("Saved scenario to '%s'", path)
    return path


def _field(data: Dict[str, Any], key: str, where: str, source: str, default: Any = ...) -> Any:
    if not isinstance(data, dict):
        raise ScenarioParseError(f"'{where}' must be an object", path=source)
    if key in data:
        return data[key]
    if default is ...:
        name = f"{where}.{key}" if where else key
        raise ScenarioParseError(f"missing field '{name}'", path=source)
    return default


def _number(value: Any, where: str, source: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"'{where}' must be a number, got {value!r}", path=source)
    return float(value)


def _numbers(value: Any, where: str, source: str) -> Tuple[float, ...]:
    if not isinstance(value, list):
        raise ScenarioParseError(f"'{where}' must be a list of numbers", path=source)
    return tuple(_number(v, f"{where}[{i}]", source) for i, v in enumerate(value))


def _process_from_dict(data: Any, where: str, source: str) -> ProcessSpec:
    kind = _field(data, "kind", where, source)
    if kind not in PROCESS_KINDS:
        raise ScenarioParseError(
            f"'{where}.kind' must be one of {', '.join(PROCESS_KINDS)}, got {kind!r}", path=source
        )
    if kind == "constant":
        return ProcessSpec(kind=kind, value=_number(_field(data, "value", where, source), f"{where}.value", source))
    if kind == "markov":
        initial = _field(data, "initial", where, source, 0)
        if isinstance(initial, bool) or not isinstance(initial, int):
            raise ScenarioParseError(f"'{where}.initial' must be an integer", path=source)
        return ProcessSpec(
            kind=kind,
            levels=_numbers(_field(data, "levels", where, source), f"{where}.levels", source),
            jump_rate=_number(_field(data, "jump_rate", where, source), f"{where}.jump_rate", source),
            initial=initial,
        )
    return ProcessSpec(
        kind=kind,
        times=_numbers(_field(data, "times", where, source), f"{where}.times", source),
        values=_numbers(_field(data, "values", where, source), f"{where}.values", source),
    )


def scenario_from_dict(data: Dict[str, Any], source: str = "<dict>") -> Scenario:
    """Build and validate a Scenario from its JSON form."""
    n_nodes = _field(data, "n_nodes", "", source)
    if isinstance(n_nodes, bool) or not isinstance(n_nodes, int):
        raise ScenarioParseError("'n_nodes' must be an integer", path=source)
    seed = _field(data, "seed", "", source, 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioParseError("'seed' must be an integer", path=source)

    policy_data = _field(data, "policy", "", source)
    policy = PolicyParams(
        ramp_rates=_numbers(_field(policy_data, "ramp_rates", "policy", source), "policy.ramp_rates", source),
        alpha_min=_numbers(_field(policy_data, "alpha_min", "policy", source), "policy.alpha_min", source),
    )

    lambda_data = _field(data, "lambda_specs", "", source)
    if not isinstance(lambda_data, list):
        raise ScenarioParseError("'lambda_specs' must be a list", path=source)
    lambda_specs = tuple(
        _process_from_dict(spec, f"lambda_specs[{i}]", source) for i, spec in enumerate(lambda_data)
    )
    b_spec = _process_from_dict(_field(data, "b_spec", "", source), "b_spec", source)

    init_data = _field(data, "init", "", source)
    w0 = _field(init_data, "w0", "init", source, None)
    prehistory = _field(init_data, "prehistory_alpha", "init", source, None)
    init = InitialConditions(
        alpha0=_numbers(_field(init_data, "alpha0", "init", source), "init.alpha0", source),
        x0=_number(_field(init_data, "x0", "init", source, 0.0), "init.x0", source),
        w0=None if w0 is None else _number(w0, "init.w0", source),
        prehistory_alpha=None if prehistory is None else _numbers(prehistory, "init.prehistory_alpha", source),
    )

    sim_data = _field(data, "simulation", "", source, {})
    settings_kwargs = {}
    for key in ("event_tol", "retention_margin", "sample_dt", "scan_step"):
        value = _field(sim_data, key, "simulation", source, None)
        if value is not None:
            settings_kwargs[key] = _number(value, f"simulation.{key}", source)
    settings = SimulationSettings(**settings_kwargs)

    opt_data = _field(data, "optimizer", "", source, {})
    opt_kwargs: Dict[str, Any] = {}
    for key in ("step_size", "decay", "stop_grad_norm"):
        value = _field(opt_data, key, "optimizer", source, None)
        if value is not None:
            opt_kwargs[key] = _number(value, f"optimizer.{key}", source)
    for key in ("paths_per_iteration", "max_iterations", "master_seed"):
        value = _field(opt_data, key, "optimizer", source, None)
        if value is not None:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ScenarioParseError(f"'optimizer.{key}' must be an integer", path=source)
            opt_kwargs[key] = value
    for key in ("mode", "schedule"):
        value = _field(opt_data, key, "optimizer", source, None)
        if value is not None:
            opt_kwargs[key] = str(value)
    optimizer = OptimizerConfig(**opt_kwargs)

    scenario = Scenario(
        n_nodes=n_nodes,
        horizon=_number(_field(data, "horizon", "", source), "horizon", source),
        thetas=_numbers(_field(data, "thetas", "", source), "thetas", source),
        policy=policy,
        lambda_specs=lambda_specs,
        b_spec=b_spec,
        init=init,
        seed=seed,
        settings=settings,
        optimizer=optimizer,
    )
    validate_scenario(scenario)
    return scenario


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioValidationError(message)


def _validate_process(spec: ProcessSpec, where: str) -> None:
    _check(spec.kind in PROCESS_KINDS, f"{where}: unknown process kind {spec.kind!r}")
    if spec.kind == "markov":
        _check(len(spec.levels) >= 1, f"{where}: markov process needs at least one level")
        _check(spec.jump_rate >= 0.0 and math.isfinite(spec.jump_rate), f"{where}: jump_rate must be nonnegative")
        _check(0 <= spec.initial < len(spec.levels), f"{where}: initial level index out of range")
    if spec.kind == "schedule":
        _check(len(spec.values) == len(spec.times) + 1, f"{where}: schedule needs len(values) == len(times) + 1")
        _check(all(t > 0.0 for t in spec.times), f"{where}: schedule times must be positive")
        _check(
            all(b > a for a, b in zip(spec.times, spec.times[1:])),
            f"{where}: schedule times must be strictly increasing",
        )
    _check(
        all(v > 0.0 and math.isfinite(v) for v in spec.rates()),
        f"{where}: rates must be strictly positive",
    )


def validate_scenario(s: Scenario) -> None:
    """Check every scenario invariant.

    Raises:
        ScenarioValidationError: Naming the first violated invariant.
    """
    n = s.n_nodes
    _check(n >= 1, "n_nodes must be at least 1")
    _check(s.horizon > 0.0 and math.isfinite(s.horizon), "horizon must be positive")
    _check(len(s.thetas) == n, f"thetas must have {n} entries")
    _check(all(t >= 0.0 and math.isfinite(t) for t in s.thetas), "theta must be nonnegative")
    _check(len(s.policy.ramp_rates) == n, f"ramp_rates must have {n} entries")
    _check(len(s.policy.alpha_min) == n, f"alpha_min must have {n} entries")
    _check(all(r > 0.0 for r in s.policy.ramp_rates), "ramp_rates must be positive")
    _check(all(a > 0.0 for a in s.policy.alpha_min), "alpha_min must be positive")
    _check(len(s.lambda_specs) == n, f"lambda_specs must have {n} entries")
    for i, spec in enumerate(s.lambda_specs):
        _validate_process(spec, f"lambda_specs[{i}]")
    _validate_process(s.b_spec, "b_spec")
    _check(0 <= s.seed <= MAX_SEED, "seed must be a 64-bit unsigned integer")

    init = s.init
    _check(len(init.alpha0) == n, f"alpha0 must have {n} entries")
    _check(
        all(a >= m for a, m in zip(init.alpha0, s.policy.alpha_min)),
        "alpha0 must be at least alpha_min",
    )
    _check(len(init.prehistory) == n, f"prehistory_alpha must have {n} entries")
    _check(all(a > 0.0 for a in init.prehistory), "prehistory values must be strictly positive")
    _check(init.x0 >= 0.0, "x0 must be nonnegative")
    if init.w0 is not None:
        _check(init.w0 >= 0.0, "w0 must be nonnegative")
        if init.x0 == 0.0:
            _check(init.w0 == 0.0, "w0 must be 0 when x0 is 0")
        implied = init.x0 / sum(init.prehistory)
        _check(
            abs(init.w0 - implied) <= W0_REL_TOL * max(1.0, implied),
            f"w0 inconsistent with x0 and prehistory (expected {implied!r})",
        )

    st = s.settings
    _check(st.event_tol > 0.0, "event_tol must be positive")
    _check(st.retention_margin >= 0.0, "retention_margin must be nonnegative")
    _check(st.sample_dt is None or st.sample_dt > 0.0, "sample_dt must be positive")
    _check(st.scan_step is None or st.scan_step > 0.0, "scan_step must be positive")

    cfg = s.optimizer
    _check(cfg.step_size > 0.0, "optimizer step_size must be positive")
    _check(cfg.decay > 0.0, "optimizer decay must be positive")
    _check(cfg.paths_per_iteration >= 1, "optimizer paths_per_iteration must be at least 1")
    _check(cfg.max_iterations >= 1, "optimizer max_iterations must be at least 1")
    _check(cfg.stop_grad_norm >= 0.0, "optimizer stop_grad_norm must be nonnegative")
    _check(cfg.mode in OPTIMIZER_MODES, f"optimizer mode must be one of {', '.join(OPTIMIZER_MODES)}")
    _check(cfg.schedule in STEP_SCHEDULES, f"optimizer schedule must be one of {', '.join(STEP_SCHEDULES)}")
    _check(0 <= cfg.master_seed <= MAX_SEED, "optimizer master_seed must be a 64-bit unsigned integer")


def resolve_seed(cli_seed: Optional[int], s: Scenario) -> int:
    """Seed precedence: explicit flag, then $SFMIPA_SEED, then the scenario."""
    if cli_seed is not None:
        return cli_seed
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            return int(env_seed)
        except ValueError as e:
            raise ScenarioValidationError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from e
    return s.seed


# ---------------------------------------------------------------------------
# Process realization
# ---------------------------------------------------------------------------

def _realize(spec: ProcessSpec, rng: np.random.Generator, horizon: float, name: str) -> PiecewiseSignal:
    times: List[float] = [0.0]
    values: List[float] = []
    if spec.kind == "constant":
        values.append(spec.value)
    elif spec.kind == "schedule":
        values.append(spec.values[0])
        for t, v in zip(spec.times, spec.values[1:]):
            if t >= horizon:
                break
            times.append(t)
            values.append(v)
    else:
        idx = spec.initial
        n_levels = len(spec.levels)
        values.append(spec.levels[idx])
        if n_levels > 1 and spec.jump_rate > 0.0:
            t = 0.0
            while True:
                t += rng.exponential(1.0 / spec.jump_rate)
                if t >= horizon:
                    break
                idx = (idx + int(rng.integers(1, n_levels))) % n_levels
                times.append(float(t))
                values.append(spec.levels[idx])
    return PiecewiseSignal.from_steps(times, values, 0.0, horizon, name=name)


def realize_processes(s: Scenario, seed: int) -> Tuple[List[PiecewiseSignal], PiecewiseSignal]:
    """Draw the supply-rate and capacity paths of one sample path.

    Node ``n`` uses child ``n`` of ``SeedSequence(seed).spawn(N + 1)``; the
    capacity process uses child ``N``. Markov levels hold for exponential
    sojourns of rate ``jump_rate`` and then move to a uniformly chosen other
    level.

    Args:
        s: Scenario.
        seed: 64-bit seed.

    Returns:
        ``(lambda_paths, b_path)`` as piecewise-constant signals on ``[0, T]``.
    """
    children = np.random.SeedSequence(seed).spawn(s.n_nodes + 1)
    lambda_paths = [
        _realize(spec, np.random.default_rng(children[n]), s.horizon, f"lambda_{n + 1}")
        for n, spec in enumerate(s.lambda_specs)
    ]
    b_path = _realize(s.b_spec, np.random.default_rng(children[s.n_nodes]), s.horizon, "B")
    logger.debug(
        "Realized processes for seed %d: %d capacity jumps", seed, len(b_path.breakpoints)
    )
    return lambda_paths, b_path
