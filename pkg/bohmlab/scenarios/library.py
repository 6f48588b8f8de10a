"""The registered scenarios: two-slit, stationary and branching universes, pointer measurement, free packets."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from typing import Any

import numpy as np

from ..compliance.diagnostics import DiagnosticsCollector
from ..core.ensemble import (
    axis_crossings,
    equivariance_report,
    ordering_violations,
    plane_crossings,
    run_ensemble,
)
from ..core.guidance import continuity_residual, velocity_field
from ..core.measurement import (
    compose,
    extract_povm,
    pointer_coupling,
    pointer_experiment,
    pointer_system_states,
    position_projectors,
    run_experiment,
    sample_result_distribution,
    verify_bilinearity,
    verify_spectral_measure,
)
from ..core.subsystem import (
    branching_universe_state,
    run_branching_universe,
    run_stationary_universe,
    stationary_universe_state,
)
from ..core.wavefield import (
    GridSpec,
    Potential,
    WaveField,
    boundary_ratio,
    density,
    fringe_contrast,
    gaussian_packet,
    init_field,
    marginal,
    norm,
    plane_wave,
)
from ..protocol import InitRule, InterpMethod, Tolerances, above, below
from .base import POSITIVE, Outcome, ParamRange, Scenario, ScenarioDefaults, ScenarioRegistry, Setup

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# relative phases of the right branch in the polarization checks
BILINEARITY_PHASES = {"real": 1.0, "imag": 1j, "minus": -1.0}


def _ensemble_checks(
    setup: Setup,
    outcome: Outcome,
    *,
    seed: int,
    tolerances: Tolerances,
    workers: int | None,
    diagnostics: DiagnosticsCollector | None,
) -> list[WaveField]:
    """Run the scenario ensemble and add the gates every dynamic scenario shares."""
    ensemble = run_ensemble(setup.scenario, setup.n, seed, setup=setup, workers=workers)
    outcome.ensemble = ensemble
    if diagnostics is not None:
        diagnostics.record_ensemble("ensemble", ensemble)

    fields = ensemble.snapshots
    report = setup.report_snapshots(fields)
    final = fields[-1]
    outcome.densities = [(f.time_tag, density(f)) for f in report]
    drift = max(abs(norm(f) - 1.0) for f in fields)
    outcome.gates.append(below("norm_drift", drift, tolerances.norm_drift))
    if not setup.periodic:
        outcome.gates.append(below("boundary_mass", boundary_ratio(density(final)), tolerances.boundary))
    outcome.gates.append(below("speed_clamps", ensemble.clamp_events, 0.5, "clamp events"))
    if setup.init is InitRule.EQUILIBRIUM:
        eq = equivariance_report(ensemble, report)
        outcome.equivariance = eq
        outcome.gates.extend(eq.gates())
    outcome.metrics.update(
        {
            "n": len(ensemble),
            "regularized_points": ensemble.regularized_points,
            "node_encounters": ensemble.node_encounters,
            "clamp_events": ensemble.clamp_events,
            "norm_drift": drift,
        }
    )
    return fields


class TwoSlit(Scenario):
    name = "two_slit"
    description = "Two Gaussian slit packets moving toward a screen; fringes and single-slit passage"
    defaults = ScenarioDefaults(
        axes=((-12.0, 24.0, 128), (-20.0, 20.0, 256)),
        dt=0.01,
        t_final=4.0,
        snapshot_times=(0.0, 1.0, 2.0, 3.0, 4.0),
        snapshot_every=0.1,
        n=200,
        init=InitRule.UNIFORM_IN_SLITS,
    )
    params = {
        "x0": 0.0,
        "k0": 2.0,
        "packet_sigma": 1.0,
        "slit_centers": (-2.0, 2.0),
        "slit_sigma": 0.7,
        "slits": ((-3.4, -0.6), (0.6, 3.4)),
        "slit_axis": 1,
        "slit_plane": (0.0,),
    }
    param_ranges = {"packet_sigma": POSITIVE, "slit_sigma": POSITIVE, "slit_axis": ParamRange(0, 1)}

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        def builder(x: np.ndarray, y: np.ndarray) -> np.ndarray:
            along = gaussian_packet(x, params["x0"], params["packet_sigma"], params["k0"], grid.hbar)
            across = sum(gaussian_packet(y, c, params["slit_sigma"]) for c in params["slit_centers"])
            return along * across

        return init_field(grid, builder)

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        outcome = Outcome(self.name)
        fields = _ensemble_checks(
            setup, outcome, seed=seed, tolerances=tolerances, workers=workers, diagnostics=diagnostics
        )
        screen = marginal(density(fields[-1]), 1).values
        contrast = fringe_contrast(screen)
        outcome.gates.append(above("fringe_contrast", contrast, tolerances.fringe_contrast, "screen marginal"))
        outcome.metrics["fringe_contrast"] = contrast

        ensemble = outcome.ensemble
        assert ensemble is not None
        if setup.init is InitRule.UNIFORM_IN_SLITS:
            hits = plane_crossings(ensemble, axis=0, plane=setup.params["slit_plane"][0], transverse=1)
            inside = np.zeros(len(hits), dtype=int)
            for lo, hi in setup.params["slits"]:
                inside += (hits >= lo) & (hits <= hi)
            misses = int(np.sum(inside != 1))
            crossings = axis_crossings(ensemble, axis=1)
            outcome.gates.append(below("slit_passage_misses", misses, 0.5, "trajectories not in exactly one slit"))
            outcome.gates.append(below("axis_crossings", crossings, 0.5, "symmetry-axis crossings"))
            outcome.metrics.update({"slit_passage_misses": misses, "axis_crossings": crossings})
        return outcome


class StationaryUniverse(Scenario):
    name = "stationary_universe"
    description = "Stationary two-particle eigenstate; the x-slice at Y(t) evolves like a free particle"
    periodic = True
    defaults = ScenarioDefaults(
        axes=((0.0, TWO_PI, 64), (0.0, TWO_PI, 64)),
        dt=1e-3,
        t_final=5.0,
        snapshot_times=(0.0, 1.0, 2.0, 3.0, 4.0, 5.0),
        snapshot_every=0.01,
        n=50,
    )
    params = {"x0": 1.0, "y0": 0.5, "samples": 50, "method": "trig"}
    param_ranges = {"samples": ParamRange(1)}
    param_choices = {"method": tuple(m.value for m in InterpMethod)}

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        return init_field(grid, stationary_universe_state)

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        p = setup.params
        report = run_stationary_universe(
            p["x0"],
            p["y0"],
            setup.t_final,
            np.linspace(0.0, setup.t_final, int(p["samples"])),
            dt=setup.dt,
            points=setup.grid.shape[0],
            method=InterpMethod(p["method"]),
            tracking_tolerance=tolerances.tracking,
            workers=workers,
        )
        outcome = Outcome(self.name, emergence=report)
        if diagnostics is not None:
            diagnostics.record_regularized("emergence", report.regularized_points)
        assert report.eigen_residual is not None
        outcome.gates.append(below("eigen_residual", report.eigen_residual, tolerances.eigen_residual, "E=2"))
        outcome.gates.extend(report.gates(tolerances.projective_distance, tolerances.schrodinger_residual))
        _ensemble_checks(setup, outcome, seed=seed, tolerances=tolerances, workers=workers, diagnostics=diagnostics)
        outcome.metrics.update(
            {
                "eigen_residual": report.eigen_residual,
                "max_projective_distance": report.max_distance,
                "max_tracking_error": report.max_tracking_error,
                "max_schrodinger_residual": report.max_residual,
                "nodal_times": len(report.nodal_times),
            }
        )
        return outcome


class BranchingUniverse(Scenario):
    name = "branching_universe"
    description = "Two disjoint environment packets; the x-slice follows the branch that Y(t) rides"
    defaults = ScenarioDefaults(
        axes=((-16.0, 16.0, 128), (-25.0, 25.0, 256)),
        dt=0.005,
        t_final=2.0,
        snapshot_times=(0.0, 0.5, 1.0, 1.5, 2.0),
        snapshot_every=0.05,
        n=200,
    )
    params = {
        "centers": (4.0, -4.0),
        "widths": (0.4, 0.4),
        "velocities": (3.0, -3.0),
        "y0": 4.2,
    }
    param_ranges = {"widths": POSITIVE}

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        universe, _ = branching_universe_state(grid, params["centers"], params["widths"], params["velocities"])
        return universe

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        p = setup.params
        report = run_branching_universe(
            p["centers"],
            p["widths"],
            p["velocities"],
            setup.t_final,
            y0=p["y0"],
            grid=setup.grid,
            dt=setup.dt,
            sample_every=setup.snapshot_spacing,
            tracking_widths=tolerances.tracking_widths,
            workers=workers,
        )
        outcome = Outcome(self.name, emergence=report)
        if diagnostics is not None:
            diagnostics.record_regularized("emergence", report.regularized_points)
        outcome.gates.extend(report.gates(tolerances.branch_distance))
        _ensemble_checks(setup, outcome, seed=seed, tolerances=tolerances, workers=workers, diagnostics=diagnostics)
        outcome.metrics.update(
            {
                "branch": report.branch,
                "max_projective_distance": report.max_distance,
                "max_tracking_widths": report.max_tracking_error,
            }
        )
        return outcome


class PointerMeasurement(Scenario):
    name = "pointer_measurement"
    description = "Impulsive pointer coupling reading the sign of x; bins against the projector oracle"
    defaults = ScenarioDefaults(
        axes=((-16.0, 16.0, 128), (-24.0, 24.0, 256)),
        dt=0.005,
        t_final=2.0,
        snapshot_times=(0.0, 2.0),
        snapshot_every=0.05,
        n=2000,
    )
    params = {"alpha2": 0.36, "kick": 5.0, "pointer_width": 0.5, "offset": 5.0, "width": 0.7}
    param_ranges = {
        "alpha2": ParamRange(0.0, 1.0),
        "pointer_width": POSITIVE,
        "offset": POSITIVE,
        "width": POSITIVE,
    }

    def _system(self, grid: GridSpec, params: Mapping[str, Any]) -> tuple[WaveField, WaveField, WaveField]:
        left, right = pointer_system_states(grid, params["offset"], params["width"])
        a = math.sqrt(params["alpha2"])
        b = math.sqrt(1.0 - params["alpha2"])
        psi = a * left + b * right
        return psi / norm(psi), left, right

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        psi, _, _ = self._system(grid.subgrid([0]), params)
        pointer = init_field(grid.subgrid([1]), lambda y: gaussian_packet(y, 0.0, params["pointer_width"]))
        return compose(psi, pointer)

    def potential(self, grid: GridSpec, params: Mapping[str, Any], dt: float) -> Potential | None:
        return pointer_coupling(grid, params["kick"], dt)

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        p = setup.params
        spec = pointer_experiment(
            kick=p["kick"],
            pointer_width=p["pointer_width"],
            dt=setup.dt,
            duration=setup.t_final,
            system_axis=_axis_tuple(setup.grid, 0),
            apparatus_axis=_axis_tuple(setup.grid, 1),
            workers=workers,
        )
        psi, left, right = self._system(spec.system_grid, p)
        outcome = Outcome(self.name)

        comparison = verify_spectral_measure(spec, position_projectors(spec.system_grid), psi)
        pushed = run_experiment(spec, psi)
        sampled = sample_result_distribution(spec, psi, setup.n, seed, workers=workers)
        outcome.distributions = [pushed, sampled]
        outcome.gates.append(below("spectral_measure", comparison.max_difference, tolerances.bin_mass))
        outcome.gates.append(below("bin_normalization", abs(pushed.total - 1.0), 1e-10))
        outcome.gates.extend(sampled.agrees_with(pushed, tolerances.binomial_sigmas))

        r = 1.0 / math.sqrt(2.0)
        deviations = {
            name: verify_bilinearity(spec, left, right, r, phase * r)
            for name, phase in BILINEARITY_PHASES.items()
        }
        for name, deviation in deviations.items():
            outcome.gates.append(below(f"bilinearity_{name}", deviation, tolerances.bilinearity))

        povm = extract_povm(spec, [left, right])
        outcome.gates.append(above("povm_positivity", povm.min_eigenvalue, -1e-8))
        outcome.gates.append(below("povm_completeness", povm.completeness_error, 1e-8))

        outcome.densities = [(setup.t_final, density(_final_composite(setup, workers)))]
        outcome.metrics.update(
            {
                "bins": pushed.to_dict()["bins"],
                "sampled_bins": sampled.to_dict()["bins"],
                "projector_bins": dict(zip(comparison.bins, comparison.projector)),
                "spectral_difference": comparison.max_difference,
                **{f"bilinearity_{name}": v for name, v in deviations.items()},
                "povm_min_eigenvalue": povm.min_eigenvalue,
                "povm_completeness_error": povm.completeness_error,
            }
        )
        return outcome


def _axis_tuple(grid: GridSpec, axis: int) -> tuple[float, float, int]:
    a = grid.axes[axis]
    return (a.lo, a.hi, a.n)


def _final_composite(setup: Setup, workers: int | None) -> WaveField:
    return setup.evolve(workers=workers)[-1]


class FreeGaussian(Scenario):
    name = "free_gaussian"
    description = "One-dimensional free Gaussian packet; no-crossing and spreading along trajectories"
    defaults = ScenarioDefaults(
        axes=((-20.0, 20.0, 256),),
        dt=0.01,
        t_final=3.0,
        snapshot_times=(0.0, 1.0, 2.0, 3.0),
        snapshot_every=0.1,
        n=100,
    )
    params = {"center": 0.0, "sigma": 1.0, "momentum": 1.0}
    param_ranges = {"sigma": POSITIVE}

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        return init_field(
            grid, lambda x: gaussian_packet(x, params["center"], params["sigma"], params["momentum"], grid.hbar)
        )

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        outcome = Outcome(self.name)
        _ensemble_checks(setup, outcome, seed=seed, tolerances=tolerances, workers=workers, diagnostics=diagnostics)
        assert outcome.ensemble is not None
        violations = ordering_violations(outcome.ensemble)
        residual = continuity_residual(setup.initial, setup.plan)
        outcome.gates.append(below("ordering_violations", violations, 0.5, "1D no-crossing"))
        outcome.gates.append(below("continuity_residual", residual, tolerances.continuity))
        outcome.metrics.update({"ordering_violations": violations, "continuity_residual": residual})
        return outcome


class PlaneWave(Scenario):
    name = "plane_wave"
    description = "Periodic plane wave; every trajectory moves at hbar k / m"
    periodic = True
    defaults = ScenarioDefaults(
        axes=((0.0, TWO_PI, 64),),
        dt=0.01,
        t_final=1.0,
        snapshot_times=(0.0, 0.5, 1.0),
        snapshot_every=0.1,
        n=100,
    )
    params = {"k": 2.0}

    def initial_state(self, grid: GridSpec, params: Mapping[str, Any]) -> WaveField:
        return init_field(grid, lambda x: plane_wave(x, params["k"]))

    def run(
        self,
        setup: Setup,
        *,
        seed: int,
        tolerances: Tolerances,
        workers: int | None = None,
        diagnostics: DiagnosticsCollector | None = None,
    ) -> Outcome:
        outcome = Outcome(self.name)
        _ensemble_checks(setup, outcome, seed=seed, tolerances=tolerances, workers=workers, diagnostics=diagnostics)
        expected = setup.grid.hbar * setup.params["k"] / setup.grid.axis_masses[0]
        error = float(np.max(np.abs(velocity_field(setup.initial).components[0] - expected)))
        outcome.gates.append(below("velocity_error", error, tolerances.velocity, f"v = {expected:g}"))
        outcome.metrics["velocity_error"] = error
        return outcome


LIBRARY: tuple[type[Scenario], ...] = (
    TwoSlit,
    StationaryUniverse,
    BranchingUniverse,
    PointerMeasurement,
    FreeGaussian,
    PlaneWave,
)


def default_registry() -> ScenarioRegistry:
    """A fresh registry holding the library scenarios."""
    return ScenarioRegistry([cls() for cls in LIBRARY])

