"""Run report and on-disk artifacts.

Writes trajectories.csv, density_t<k>.csv, results.csv and report.json for
one scenario run. report.json is written with sorted keys and carries no
wall-clock values apart from `generated_at`, so identical inputs give
identical files.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from ..protocol import GateResult

if TYPE_CHECKING:
    from ..core.ensemble import TrajectoryEnsemble
    from ..core.measurement import ResultDistribution
    from ..core.wavefield import DensityField
    from ..scenarios.base import Outcome

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _jsonable(value: Any) -> Any:
    """Plain-JSON view of report values: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, complex):
        return {"re": _jsonable(value.real), "im": _jsonable(value.imag)}
    return value


@dataclass
class RunReport:
    """Gate results, metrics and diagnostics of one run."""

    scenario: str
    seed: int | None
    gates: list[GateResult] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    sections: dict[str, Any] = field(default_factory=dict)
    errors: list[dict[str, str]] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    generated_at: float = field(default_factory=time.time)

    @classmethod
    def from_outcome(
        cls,
        outcome: Outcome,
        *,
        seed: int,
        config: dict[str, Any] | None = None,
        diagnostics: dict[str, Any] | None = None,
    ) -> RunReport:
        sections: dict[str, Any] = {}
        if outcome.equivariance is not None:
            sections["equivariance"] = outcome.equivariance.to_dict()
        if outcome.emergence is not None:
            sections["emergence"] = outcome.emergence.to_dict()
        if outcome.distributions:
            sections["distributions"] = [d.to_dict() for d in outcome.distributions]
        return cls(
            scenario=outcome.scenario,
            seed=seed,
            gates=list(outcome.gates),
            metrics=dict(outcome.metrics),
            diagnostics=diagnostics or {},
            config=config or {},
            sections=sections,
        )

    @classmethod
    def config_failure(cls, problems: list[str], *, scenario: str = "", seed: int | None = None) -> RunReport:
        return cls(scenario=scenario, seed=seed, errors=[{"kind": "config", "message": p} for p in problems])

    @classmethod
    def run_failure(cls, exc: Exception, *, scenario: str, seed: int) -> RunReport:
        return cls(scenario=scenario, seed=seed, errors=[{"kind": type(exc).__name__, "message": str(exc)}])

    @property
    def passed(self) -> bool:
        return not self.errors and all(g.passed for g in self.gates)

    @property
    def failures(self) -> list[dict[str, Any]]:
        """Machine-readable failure list: errors first, then failed gates."""
        out: list[dict[str, Any]] = [dict(e) for e in self.errors]
        out += [{"kind": "gate", **g.to_dict()} for g in self.gates if not g.passed]
        return out

    def print_summary(self) -> None:
        print(f"\n{'='*60}")
        print(f"  RUN REPORT: {self.scenario or '?'}")
        print(f"{'='*60}")
        print(f"  Seed:                 {self.seed}")
        print(f"  Status:               {'PASS' if self.passed else 'FAIL'}")
        print(f"  Gates:                {sum(g.passed for g in self.gates)}/{len(self.gates)} passed")
        for e in self.errors:
            print(f"    {e['kind']}: {e['message']}")
        if self.gates:
            print(f"\n  Gates:")
            for g in self.gates:
                mark = "ok " if g.passed else "FAIL"
                print(f"    [{mark}] {g.name:<28} {g.value:.3e} (limit {g.threshold:.3e})")
        if self.diagnostics:
            print(f"\n  Diagnostics:")
            for key in ("trajectories", "regularized_points", "node_encounters", "clamp_events"):
                if key in self.diagnostics:
                    print(f"    {key:<22} {self.diagnostics[key]}")
        if self.artifacts:
            print(f"\n  Artifacts ({len(self.artifacts)}):")
            for name in self.artifacts:
                print(f"    {name}")
        print(f"{'='*60}\n")

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(
            {
                "scenario": self.scenario,
                "seed": self.seed,
                "passed": self.passed,
                "failures": self.failures,
                "gates": [g.to_dict() for g in self.gates],
                "metrics": self.metrics,
                "diagnostics": self.diagnostics,
                "config": self.config,
                **self.sections,
                "artifacts": sorted(self.artifacts),
                "generated_at": self.generated_at,
            }
        )

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        logger.info("Wrote %s", path)
        return path


# ── CSV artifacts ──


def write_trajectories(ensemble: TrajectoryEnsemble, path: str | Path) -> Path:
    """Columns: t, q0..q{d-1}, trajectory_id, u0..u{d-1} (unwrapped)."""
    path = Path(path)
    if not ensemble.trajectories:
        raise ValueError("ensemble has no trajectories")
    dims = ensemble.trajectories[0].positions.shape[1]
    header = ",".join(["t", *(f"q{i}" for i in range(dims)), "trajectory_id", *(f"u{i}" for i in range(dims))])
    rows = [
        np.column_stack([tr.times, tr.positions, np.full(len(tr.times), tr.index), tr.unwrapped])
        for tr in ensemble.trajectories
    ]
    np.savetxt(path, np.vstack(rows), delimiter=",", header=header, comments="", fmt=FLOAT_FORMAT)
    return path


def write_density(d: DensityField, path: str | Path) -> Path:
    """One row per grid point: coordinates per axis, then the density."""
    path = Path(path)
    coords = [m.ravel() for m in d.grid.mesh()]
    header = ",".join([*(f"q{i}" for i in range(d.grid.dims)), "density"])
    np.savetxt(
        path, np.column_stack([*coords, d.values.ravel()]), delimiter=",", header=header, comments="", fmt=FLOAT_FORMAT
    )
    return path


def write_results(distributions: list[ResultDistribution], path: str | Path) -> Path:
    """Columns: method, bin, mass, sample_count."""
    path = Path(path)
    lines = ["method,bin,mass,sample_count"]
    for dist in distributions:
        for label, mass in zip(dist.bins, dist.masses):
            lines.append(f"{dist.method.value},{label},{FLOAT_FORMAT % mass},{dist.sample_count}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_artifacts(outcome: Outcome, out_dir: str | Path) -> list[str]:
    """Write every CSV the outcome supports; returns the file names written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    if outcome.ensemble is not None and outcome.ensemble.trajectories:
        written.append(write_trajectories(outcome.ensemble, out / "trajectories.csv").name)
    for k, (_, d) in enumerate(outcome.densities):
        written.append(write_density(d, out / f"density_t{k}.csv").name)
    if outcome.distributions:
        written.append(write_results(outcome.distributions, out / "results.csv").name)
    logger.info("Wrote %d artifacts to %s", len(written), out)
    return written
