"""Run configuration: strict TOML with one table per module.

Unknown tables and keys are errors, and every problem in a file is
collected before one ConfigError is raised. `BOHMLAB_WORKERS` and
`BOHMLAB_LOG_LEVEL` may come from the environment or a `.env` file.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from dotenv import load_dotenv

from .protocol import ConfigError, InitRule, Tolerances

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

if TYPE_CHECKING:
    from .scenarios.base import ScenarioRegistry

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class PlotToggles:
    trajectories: bool = False
    density: bool = False
    histogram: bool = False

    @property
    def any(self) -> bool:
        return self.trajectories or self.density or self.histogram


@dataclass(frozen=True)
class RunConfig:
    """A validated run: scenario id, seed, setup overrides and gate tolerances."""

    scenario: str
    seed: int
    output_dir: Path = Path("out")
    workers: int | None = None
    overrides: Mapping[str, Any] = field(default_factory=dict)
    params: Mapping[str, Any] = field(default_factory=dict)
    tolerances: Tolerances = field(default_factory=Tolerances)
    plots: PlotToggles = field(default_factory=PlotToggles)
    log_level: str = "INFO"

    def with_output(self, output_dir: str | Path | None) -> RunConfig:
        if output_dir is None:
            return self
        return dataclasses.replace(self, output_dir=Path(output_dir))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "overrides": {k: _plain(v) for k, v in sorted(self.overrides.items())},
            "params": {k: _plain(v) for k, v in sorted(self.params.items())},
            "tolerances": dataclasses.asdict(self.tolerances),
            "plots": dataclasses.asdict(self.plots),
        }


def _freeze(v: Any) -> Any:
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


def _plain(v: Any) -> Any:
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, InitRule):
        return v.value
    return v


# table -> key -> accepted types
_SCHEMA: dict[str, dict[str, tuple[type, ...]]] = {
    "run": {"scenario": (str,), "seed": (int,), "output_dir": (str,), "workers": (int,)},
    "grid": {"axes": (list,), "hbar": (int, float), "masses": (list,)},
    "propagator": {
        "dt": (int, float),
        "t_final": (int, float),
        "snapshot_times": (list,),
        "snapshot_every": (int, float),
    },
    "ensemble": {"n": (int,), "dt_traj": (int, float), "init": (str,)},
    "tolerances": {f.name: (int, float) for f in dataclasses.fields(Tolerances)},
    "plots": {f.name: (bool,) for f in dataclasses.fields(PlotToggles)},
}
_FREE_TABLES = {"scenario"}


def _check_types(data: Mapping[str, Any], problems: list[str]) -> None:
    for table, body in data.items():
        if table not in _SCHEMA and table not in _FREE_TABLES:
            problems.append(f"[{table}]: unknown table")
            continue
        if not isinstance(body, dict):
            problems.append(f"[{table}]: expected a table")
            continue
        if table in _FREE_TABLES:
            continue
        schema = _SCHEMA[table]
        for key, value in body.items():
            if key not in schema:
                problems.append(f"{table}.{key}: unknown key")
            elif isinstance(value, bool) and bool not in schema[key]:
                problems.append(f"{table}.{key}: expected {schema[key][0].__name__}, got bool")
            elif not isinstance(value, schema[key]):
                problems.append(f"{table}.{key}: expected {schema[key][0].__name__}, got {type(value).__name__}")


def _check_axes(axes: Any, problems: list[str]) -> None:
    for i, axis in enumerate(axes):
        if not (isinstance(axis, list) and len(axis) == 3):
            problems.append(f"grid.axes[{i}]: expected [lo, hi, n]")
        elif not isinstance(axis[2], int) or isinstance(axis[2], bool):
            problems.append(f"grid.axes[{i}].n: expected an integer point count")


def _table(data: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    body = data.get(name, {})
    return body if isinstance(body, dict) else {}


def _check_ranges(data: Mapping[str, Any], problems: list[str]) -> None:
    ens = _table(data, "ensemble")
    if isinstance(ens.get("n"), int) and ens["n"] < 1:
        problems.append("ensemble.n: ensemble size must be >= 1")
    if isinstance(ens.get("dt_traj"), (int, float)) and not ens["dt_traj"] > 0:
        problems.append("ensemble.dt_traj: must be positive")
    if isinstance(ens.get("init"), str) and ens["init"] not in {r.value for r in InitRule}:
        problems.append(f"ensemble.init: '{ens['init']}' is not one of {', '.join(r.value for r in InitRule)}")

    prop = _table(data, "propagator")
    for key in ("t_final", "snapshot_every"):
        v = prop.get(key)
        if isinstance(v, (int, float)) and not (math.isfinite(v) and v > 0):
            problems.append(f"propagator.{key}: {v} must be positive")
    times = prop.get("snapshot_times")
    if isinstance(times, list) and any(not isinstance(t, (int, float)) or t < 0 for t in times):
        problems.append("propagator.snapshot_times: times must be non-negative numbers")

    grid = _table(data, "grid")
    if isinstance(grid.get("axes"), list):
        _check_axes(grid["axes"], problems)

    for key, v in _table(data, "tolerances").items():
        if isinstance(v, (int, float)) and not v > 0:
            problems.append(f"tolerances.{key}: {v} must be positive")

    run = _table(data, "run")
    if isinstance(run.get("workers"), int) and run["workers"] < 1:
        problems.append("run.workers: must be >= 1")


def _env_workers(problems: list[str]) -> int | None:
    raw = os.environ.get("BOHMLAB_WORKERS")
    if not raw:
        return None
    try:
        workers = int(raw)
    except ValueError:
        problems.append(f"BOHMLAB_WORKERS: '{raw}' is not an integer")
        return None
    if workers < 1:
        problems.append("BOHMLAB_WORKERS: must be >= 1")
        return None
    return workers


def env_log_level() -> str:
    level = os.environ.get("BOHMLAB_LOG_LEVEL", "INFO").upper()
    return level if level in LOG_LEVELS else "INFO"


def parse_config(
    path: str | Path, *, registry: ScenarioRegistry | None = None, seed: int | None = None
) -> RunConfig:
    """Read and validate a run config; raises ConfigError listing every problem found.

    A `seed` given here (the CLI --seed) replaces the one in the file.
    """
    path = Path(path)
    load_dotenv()
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field_name="path") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}", field_name="path") from e
    return config_from_dict(data, registry=registry, seed=seed)


def config_from_dict(
    data: Mapping[str, Any], *, registry: ScenarioRegistry | None = None, seed: int | None = None
) -> RunConfig:
    problems: list[str] = []
    _check_types(data, problems)
    _check_ranges(data, problems)

    run = _table(data, "run")
    scenario = run.get("scenario")
    if "scenario" not in run:
        problems.append("run.scenario: missing")
    if "seed" not in run and seed is None:
        problems.append("run.seed: missing (no entropy default)")

    params = _table(data, "scenario")
    if isinstance(scenario, str):
        if registry is None:
            from .scenarios import default_registry

            registry = default_registry()
        if scenario not in registry:
            known = ", ".join(registry.names()) or "none"
            problems.append(f"run.scenario: unknown scenario '{scenario}' (registered: {known})")
        else:
            definition = registry.get(scenario)
            problems += [
                f"scenario.{k}: unknown parameter for '{scenario}'" for k in params if k not in definition.params
            ]
            problems += definition.check_params(params, prefix="scenario")

    workers = _env_workers(problems)
    if problems:
        logger.debug("Config rejected with %d problems", len(problems))
        raise ConfigError(
            "; ".join(problems), field_name=problems[0].split(":")[0], problems=problems
        )

    overrides: dict[str, Any] = {}
    for table in ("grid", "propagator", "ensemble"):
        for key, value in data.get(table, {}).items():
            overrides[key] = _freeze(value)
    if "init" in overrides:
        overrides["init"] = InitRule(overrides["init"])

    return RunConfig(
        scenario=scenario,
        seed=int(seed if seed is not None else run["seed"]),
        output_dir=Path(run.get("output_dir", "out")),
        workers=workers if workers is not None else run.get("workers"),
        overrides=overrides,
        params={k: _freeze(v) for k, v in params.items()},
        tolerances=Tolerances(**{k: float(v) for k, v in data.get("tolerances", {}).items()}),
        plots=PlotToggles(**data.get("plots", {})),
        log_level=env_log_level(),
    )
