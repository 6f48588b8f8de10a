"""Scenario definitions: defaults, setup from overrides, and the registry.

A Scenario holds the numerical defaults and builders for one experiment.
`setup()` applies config overrides and validates them into a `Setup`, and
`run()` turns a Setup into an `Outcome` of gates and metrics.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, ClassVar

from ..compliance.diagnostics import DiagnosticsCollector
from ..core.ensemble import EquivarianceReport, TrajectoryEnsemble
from ..core.measurement import ResultDistribution
from ..core.propagator import PropagatorPlan, evolve, make_plan
from ..core.subsystem import EmergenceReport
from ..core.wavefield import DensityField, GridSpec, Potential, WaveField, make_grid
from ..protocol import ConfigError, GateResult, InitRule, Tolerances, UnknownScenarioError

logger = logging.getLogger(__name__)

AxisSpec = tuple[float, float, int]


@dataclass(frozen=True)
class ScenarioDefaults:
    axes: tuple[AxisSpec, ...]
    hbar: float = 1.0
    masses: tuple[float, ...] = (1.0,)
    dt: float = 0.01
    t_final: float = 1.0
    snapshot_times: tuple[float, ...] = ()
    snapshot_every: float = 0.1
    n: int = 100
    dt_traj: float = 0.0
    init: InitRule = InitRule.EQUILIBRIUM


OVERRIDABLE = frozenset(f.name for f in dataclasses.fields(ScenarioDefaults))


@dataclass(frozen=True)
class ParamRange:
    """Allowed interval for a numeric scenario parameter, applied to every element of a tuple."""

    lo: float | None = None
    hi: float | None = None
    open_lo: bool = False

    def problem(self, v: float) -> str | None:
        if self.lo is not None and self.open_lo and not v > self.lo:
            return f"{v} must be > {self.lo:g}"
        if self.lo is not None and v < self.lo:
            return f"{v} must be >= {self.lo:g}"
        if self.hi is not None and v > self.hi:
            return f"{v} must be <= {self.hi:g}"
        return None


POSITIVE = ParamRange(0.0, open_lo=True)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _type_problem(default: Any, value: Any) -> str | None:
    """Mismatch between a parameter value and the shape of its default, or None."""
    if isinstance(default, bool) or isinstance(default, str):
        ok = type(value) is type(default)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = _is_number(value) and math.isfinite(value)
    elif isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            return f"expected a list of {len(default)} entries"
        for d, v in zip(default, value):
            p = _type_problem(d, v)
            if p:
                return p
        return None
    else:
        return None
    return None if ok else f"expected {type(default).__name__}, got {type(value).__name__}"


def _numbers(value: Any) -> list[float]:
    if isinstance(value, (list, tuple)):
        return [x for v in value for x in _numbers(v)]
    return [value] if _is_number(value) else []


@dataclass(frozen=True, eq=False)
class Setup:
    """A validated, ready-to-run scenario instance."""

    scenario: str
    grid: GridSpec
    initial: WaveField
    plan: PropagatorPlan
    t_final: float
    snapshot_times: tuple[float, ...]
    snapshot_spacing: float
    dt_traj: float
    n: int
    init: InitRule
    periodic: bool
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.plan.dt

    @property
    def potential(self) -> Potential:
        return self.plan.potential

    def field_times(self) -> list[float]:
        """Velocity-field snapshot times: the spacing lattice, report times and coupling frame ends."""
        stride = max(1, round(self.snapshot_spacing / self.dt))
        n = round(self.t_final / (stride * self.dt))
        times = {round(k * stride * self.dt, 12) for k in range(n + 1)}
        times |= {round(t, 12) for t in self.snapshot_times}
        times |= {round(fr.stop, 12) for fr in self.potential.frames if 0 < fr.stop < self.t_final}
        times.add(round(self.t_final, 12))
        return sorted(times)

    def evolve(self, *, workers: int | None = None) -> list[WaveField]:
        plan = self.plan if workers is None else make_plan(self.grid, self.dt, self.potential, workers=workers)
        return evolve(self.initial, plan, self.t_final, self.field_times())

    def report_snapshots(self, fields: Sequence[WaveField]) -> list[WaveField]:
        wanted = {round(t, 12) for t in self.snapshot_times}
        return [f for f in fields if round(f.time_tag, 12) in wanted]


@dataclass
class Outcome:
    scenario: str
    gates: list[GateResult] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)
    ensemble: TrajectoryEnsemble | None = None
    densities: list[tuple[float, DensityField]] = field(default_factory=list)
    distributions: list[ResultDistribution] = field(default_factory=list)
    equivariance: EquivarianceReport | None = None
    emergence: EmergenceReport | None = None

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    @property
    def failures(self) -> list[GateResult]:
        return [g for g in self.gates if not g.passed]


class Scenario:
    """Base class for registered scenarios; subclasses set the class attributes and builders."""

    name: ClassVar[str] = ""
    description: ClassVar[str] = ""
    periodic: ClassVar[bool] = False
    defaults: ClassVar[ScenarioDefaults]
    params: ClassVar[Mapping[str, Any]] = {}
    param_ranges: ClassVar[Mapping[str, ParamRange]] = {}
    param_choices: ClassVar[Mapping[str, tuple[str, ...]]] = {}

    def check_params(self, params: Mapping[str, Any], prefix: str = "params") -> list[str]:
        """Type and range problems of known parameters, as `prefix.key: message` lines."""
        problems = []
        for key, value in params.items():
            if key not in self.params:
                continue
            msg = _type_problem(self.params[key], value)
            if msg is None and key in self.param_choices and value not in self.param_choices[key]:
                msg = f"'{value}' is not one of {', '.join(self.param_choices[key])}"
            if msg is None and key in self.param_ranges:
                msg = next(filter(None, (self.param_ranges[key].problem(v) for v in _numbers(value))), None)
            if msg is not None:
                problems.append(f"{prefix}.{key}: {msg}")
        return problems

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        raise NotImplementedError

    def potential(self, grid: GridSpec, params: Mapping[str, Any], dt: float) -> Potential | None:
        return None

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        raise NotImplementedError

    def setup(self, *, params: Mapping[str, Any] | None = None, **overrides: Any) -> Setup:
        """Apply overrides to the defaults and build grid, initial field and plan."""
        unknown = sorted(set(overrides) - OVERRIDABLE)
        unknown += sorted(f"params.{k}" for k in set(params or {}) - set(self.params))
        if unknown:
            raise ConfigError(
                f"unknown settings for scenario '{self.name}': {', '.join(unknown)}",
                field_name=unknown[0],
                problems=[f"{k}: unknown setting" for k in unknown],
            )
        bad = self.check_params(params or {})
        if bad:
            raise ConfigError("; ".join(bad), field_name=bad[0].split(":")[0], problems=bad)
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "axes" in clean:
            clean["axes"] = tuple(tuple(a) for a in clean["axes"])
        for key in ("masses", "snapshot_times"):
            if key in clean:
                clean[key] = tuple(clean[key])
        if "init" in clean:
            clean["init"] = InitRule(clean["init"])
        d = dataclasses.replace(self.defaults, **clean)
        merged = {**self.params, **(params or {})}

        problems = []
        if not d.dt > 0:
            problems.append(f"dt: {d.dt} must be positive")
        if d.n < 1:
            problems.append("n: ensemble size must be >= 1")
        if not d.t_final > 0:
            problems.append(f"t_final: {d.t_final} must be positive")
        if not d.snapshot_every > 0:
            problems.append(f"snapshot_every: {d.snapshot_every} must be positive")
        if d.dt_traj < 0:
            problems.append(f"dt_traj: {d.dt_traj} must be positive")
        if problems:
            raise ConfigError("; ".join(problems), field_name=problems[0].split(":")[0], problems=problems)

        grid = make_grid(d.axes, d.hbar, d.masses)
        initial = self.initial_state(grid, merged)
        plan = make_plan(grid, d.dt, self.potential(grid, merged, d.dt))
        times = tuple(sorted(d.snapshot_times)) or tuple(
            round(k * d.snapshot_every, 12) for k in range(int(round(d.t_final / d.snapshot_every)) + 1)
        )
        if times[-1] > d.t_final + 1e-12:
            raise ConfigError(
                f"snapshot time {times[-1]} is beyond t_final {d.t_final}", field_name="snapshot_times"
            )
        return Setup(
            scenario=self.name,
            grid=grid,
            initial=initial,
            plan=plan,
            t_final=d.t_final,
            snapshot_times=times,
            snapshot_spacing=min(d.snapshot_every, 10 * abs(d.dt)),
            dt_traj=d.dt_traj or abs(d.dt),
            n=d.n,
            init=d.init,
            periodic=self.periodic,
            params=merged,
        )


class ScenarioRegistry:
    def __init__(self, scenarios: Sequence[Scenario] = ()):
        self._scenarios: dict[str, Scenario] = {}
        for s in scenarios:
            self.register(s)

    def register(self, scenario: Scenario, *, replace: bool = False) -> None:
        if not scenario.name:
            raise ConfigError("scenario needs a name", field_name="name")
        if scenario.name in self._scenarios and not replace:
            raise ConfigError(f"scenario '{scenario.name}' is already registered", field_name="name")
        self._scenarios[scenario.name] = scenario
        logger.debug("Registered scenario '%s'", scenario.name)

    def get(self, name: str) -> Scenario:
        try:
            return self._scenarios[name]
        except KeyError:
            known = ", ".join(self.names()) or "none"
            raise UnknownScenarioError(f"unknown scenario '{name}' (registered: {known})") from None

    def names(self) -> list[str]:
        return list(self._scenarios)

    def describe(self) -> list[tuple[str, str]]:
        return [(s.name, s.description) for s in self._scenarios.values()]

    def __contains__(self, name: object) -> bool:
        return name in self._scenarios

    def __len__(self) -> int:
        return len(self._scenarios)

    def __iter__(self) -> Iterator[Scenario]:
        return iter(self._scenarios.values())
