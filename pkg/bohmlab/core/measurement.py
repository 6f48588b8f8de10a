"""Experiment to result-distribution pipeline: compose, couple, evolve, push forward.

An experiment prepares system x apparatus, evolves the composite under a
time-dependent coupling for a fixed duration, and bins the final
configuration through a result function. The distribution over bins is
bilinear in the system state, which is what `verify_bilinearity` and
`extract_povm` check.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from ..protocol import ConfigError, GateResult, PropagationError, ResultMethod, below
from .ensemble import VelocityProvider, integrate_ensemble, sample_equilibrium
from .propagator import PropagatorPlan, evolve, make_plan
from .wavefield import (
    GridSpec,
    Potential,
    PotentialFrame,
    WaveField,
    boundary_ratio,
    density,
    gaussian_packet,
    init_field,
    inner_product,
    make_grid,
    norm,
)

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-10
ORTHO_TOLERANCE = 1e-8
BOUNDARY_LIMIT = 1e-6
DEFAULT_MEMORY_BUDGET = 512 * 2**20  # bytes per composite field

ResultFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """System grid, apparatus ready state, coupling schedule, duration and result bins.

    `result_function` maps configurations of shape (n, dims) to bin indices.
    """

    system_grid: GridSpec
    ready_state: WaveField
    coupling: Potential
    duration: float
    bins: tuple[str, ...]
    result_function: ResultFunction
    dt: float
    snapshot_every: float = 0.05
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    periodic: bool = False
    workers: int | None = None

    def __post_init__(self) -> None:
        if abs(norm(self.ready_state) - 1.0) > NORM_TOLERANCE:
            raise ConfigError("apparatus ready state must be normalized", field_name="ready_state")
        self.composite_grid.require_same(self.coupling.grid)
        if not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}", field_name="duration")
        if not self.bins:
            raise ConfigError("experiment needs at least one result bin", field_name="bins")
        labels = self.labels
        if labels.min() < 0 or labels.max() >= len(self.bins):
            raise ConfigError("result function must map every configuration to a bin", field_name="bins")

    @cached_property
    def composite_grid(self) -> GridSpec:
        return self.system_grid.product(self.ready_state.grid)

    @cached_property
    def labels(self) -> np.ndarray:
        """Bin index of every composite grid point (row-major)."""
        pts = np.stack([q.ravel() for q in self.composite_grid.mesh()], axis=1)
        labels = np.asarray(self.result_function(pts), dtype=int)
        if labels.shape != (self.composite_grid.size,):
            raise ConfigError("result function must return one bin per configuration", field_name="bins")
        return labels

    @cached_property
    def plan(self) -> PropagatorPlan:
        return make_plan(self.composite_grid, self.dt, self.coupling, workers=self.workers)

    def field_times(self) -> list[float]:
        stride = max(1, round(self.snapshot_every / self.dt))
        n = round(self.duration / (stride * self.dt))
        times = {round(k * stride * self.dt, 12) for k in range(n + 1)}
        times |= {round(fr.stop, 12) for fr in self.coupling.frames if 0 < fr.stop < self.duration}
        times.add(round(self.duration, 12))
        return sorted(times)


@dataclass(frozen=True)
class ResultDistribution:
    bins: tuple[str, ...]
    masses: tuple[float, ...]
    method: ResultMethod = ResultMethod.PUSHFORWARD
    sample_count: int = 0

    @property
    def total(self) -> float:
        return float(sum(self.masses))

    def mass(self, label: str) -> float:
        return self.masses[self.bins.index(label)]

    def agrees_with(self, reference: ResultDistribution, sigmas: float = 3.0) -> list[GateResult]:
        """Per-bin binomial gate of this sampled distribution against a reference."""
        n = self.sample_count
        if n < 1:
            raise ConfigError("agreement test needs a sampled distribution", field_name="sample_count")
        gates = []
        for label, f, p in zip(self.bins, self.masses, reference.masses):
            sigma = math.sqrt(max(p * (1.0 - p), 0.0) / n)
            limit = sigmas * sigma if sigma > 0 else sigmas / n
            gates.append(below(f"sampled_bin[{label}]", abs(f - p), limit, f"n={n}"))
        return gates

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "bins": dict(zip(self.bins, self.masses)),
            "sample_count": self.sample_count,
        }


# ── Pipeline ──


def _tensor(system: WaveField, apparatus: WaveField, memory_budget: int) -> WaveField:
    grid = system.grid.product(apparatus.grid)
    needed = grid.size * np.dtype(np.complex128).itemsize
    if needed > memory_budget:
        raise ConfigError(
            f"composite grid needs {needed} bytes, above the memory budget of {memory_budget}",
            field_name="memory_budget",
        )
    amps = np.multiply.outer(system.amplitudes, apparatus.amplitudes)
    return WaveField(grid, amps, system.time_tag)


def compose(system: WaveField, apparatus: WaveField, *, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> WaveField:
    """Tensor product system x apparatus on the product grid."""
    for name, f in (("system", system), ("apparatus", apparatus)):
        if abs(norm(f) - 1.0) > NORM_TOLERANCE:
            raise ConfigError(f"{name} state must be normalized", field_name=name)
    return _tensor(system, apparatus, memory_budget)


def _pushforward(spec: ExperimentSpec, psi: WaveField) -> np.ndarray:
    composite = _tensor(psi, spec.ready_state, spec.memory_budget)
    final = evolve(composite, spec.plan, spec.duration)[-1]
    if not np.all(np.isfinite(final.amplitudes)):
        raise PropagationError("composite evolution produced non-finite amplitudes")
    d = density(final)
    if not spec.periodic:
        leak = boundary_ratio(d)
        if leak > BOUNDARY_LIMIT:
            raise PropagationError(f"density reached the domain boundary: {leak:.3e} of peak")
    return np.bincount(spec.labels, weights=d.values.ravel(), minlength=len(spec.bins)) * d.grid.cell_volume


def run_experiment(spec: ExperimentSpec, psi: WaveField) -> ResultDistribution:
    """Evolve system x ready state for the duration and sum the final density per result bin."""
    if abs(norm(psi) - 1.0) > NORM_TOLERANCE:
        raise ConfigError("system state must be normalized", field_name="psi")
    masses = _pushforward(spec, psi)
    logger.debug("Result distribution %s", dict(zip(spec.bins, masses.round(6))))
    return ResultDistribution(spec.bins, tuple(float(m) for m in masses), ResultMethod.PUSHFORWARD)


def _cross_term(spec: ExperimentSpec, a: WaveField, b: WaveField) -> np.ndarray:
    """Per-bin sesquilinear form <a, O_z b> by polarization over (a + i^k b) / sqrt(2)."""
    total = np.zeros(len(spec.bins), dtype=complex)
    for k in range(4):
        phase = 1j**k
        mixed = (a + phase * b) / math.sqrt(2.0)
        total += np.conj(phase) * _pushforward(spec, mixed)
    return 0.5 * total


def _require_orthonormal(states: Sequence[WaveField]) -> None:
    for i, a in enumerate(states):
        for j, b in enumerate(states):
            expected = 1.0 if i == j else 0.0
            if abs(inner_product(a, b) - expected) > ORTHO_TOLERANCE:
                raise ConfigError("basis states must be orthonormal", field_name="states")


def verify_bilinearity(
    spec: ExperimentSpec, psi1: WaveField, psi2: WaveField, alpha: complex, beta: complex
) -> float:
    """Max per-bin gap between mu(alpha psi1 + beta psi2) and its sesquilinear expansion."""
    _require_orthonormal([psi1, psi2])
    if abs(abs(alpha) ** 2 + abs(beta) ** 2 - 1.0) > NORM_TOLERANCE:
        raise ConfigError("|alpha|^2 + |beta|^2 must equal 1", field_name="alpha")
    direct = _pushforward(spec, alpha * psi1 + beta * psi2)
    mu11 = _pushforward(spec, psi1)
    mu22 = _pushforward(spec, psi2)
    mu12 = _cross_term(spec, psi1, psi2)
    expanded = abs(alpha) ** 2 * mu11 + abs(beta) ** 2 * mu22 + 2.0 * np.real(np.conj(alpha) * beta * mu12)
    return float(np.max(np.abs(direct - expanded)))


@dataclass(frozen=True)
class SpectralComparison:
    bins: tuple[str, ...]
    experiment: tuple[float, ...]
    projector: tuple[float, ...]

    @property
    def max_difference(self) -> float:
        return float(np.max(np.abs(np.subtract(self.experiment, self.projector))))

    def to_dict(self) -> dict[str, Any]:
        return {
            "bins": list(self.bins),
            "experiment": list(self.experiment),
            "projector": list(self.projector),
            "max_difference": self.max_difference,
        }


def _projector_masses(projectors: Sequence[np.ndarray], psi: WaveField) -> list[float]:
    """||P psi||^2 for diagonal masks on the system grid or dense (size, size) matrices."""
    grid = psi.grid
    vec = psi.amplitudes.ravel()
    dense = []
    for p in projectors:
        p = np.asarray(p)
        if p.shape == grid.shape:
            dense.append(np.diag(p.ravel().astype(complex)))
        elif p.shape == (grid.size, grid.size):
            dense.append(p.astype(complex))
        else:
            raise ConfigError(f"projector of shape {p.shape} does not act on the system grid", field_name="operator")
    identity = np.eye(grid.size)
    if np.max(np.abs(sum(dense) - identity)) > NORM_TOLERANCE:
        raise ConfigError("projector family is incomplete", field_name="operator")
    for i, a in enumerate(dense):
        if np.max(np.abs(a @ a - a)) > NORM_TOLERANCE:
            raise ConfigError(f"operator {i} is not a projector", field_name="operator")
        for b in dense[i + 1 :]:
            if np.max(np.abs(a @ b)) > NORM_TOLERANCE:
                raise ConfigError("projectors are not mutually orthogonal", field_name="operator")
    return [float(np.vdot(p @ vec, p @ vec).real * grid.cell_volume) for p in dense]


def verify_spectral_measure(
    spec: ExperimentSpec, projectors: Sequence[np.ndarray], psi: WaveField
) -> SpectralComparison:
    """Compare experiment bins with ||P_z psi||^2; projectors are listed in bin order."""
    if len(projectors) != len(spec.bins):
        raise ConfigError(
            f"{len(projectors)} projectors for {len(spec.bins)} bins", field_name="operator"
        )
    oracle = _projector_masses(projectors, psi)
    measured = run_experiment(spec, psi)
    return SpectralComparison(spec.bins, measured.masses, tuple(oracle))


@dataclass
class PovmEstimate:
    """POVM matrices O_z in the given basis, with positivity and completeness diagnostics."""

    bins: tuple[str, ...]
    elements: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(o).min()) for o in self.elements.values())

    @property
    def completeness_error(self) -> float:
        total = sum(self.elements.values())
        return float(np.max(np.abs(total - np.eye(total.shape[0]))))

    def to_dict(self) -> dict[str, Any]:
        return {
            "bins": list(self.bins),
            "min_eigenvalue": self.min_eigenvalue,
            "completeness_error": self.completeness_error,
            "elements": {
                z: {"real": o.real.tolist(), "imag": o.imag.tolist()} for z, o in self.elements.items()
            },
        }


def extract_povm(spec: ExperimentSpec, basis: Sequence[WaveField]) -> PovmEstimate:
    """Materialize O_z in a small orthonormal basis: diagonal by direct runs, off-diagonal by polarization."""
    _require_orthonormal(basis)
    b = len(basis)
    mats = np.zeros((len(spec.bins), b, b), dtype=complex)
    for i in range(b):
        mats[:, i, i] = _pushforward(spec, basis[i])
        for j in range(i + 1, b):
            m = _cross_term(spec, basis[i], basis[j])
            mats[:, i, j] = m
            mats[:, j, i] = np.conj(m)
    return PovmEstimate(spec.bins, {z: mats[k] for k, z in enumerate(spec.bins)})


def sample_result_distribution(
    spec: ExperimentSpec, psi: WaveField, n: int, seed: int, *, workers: int | None = None
) -> ResultDistribution:
    """Result frequencies of n equilibrium trajectories of the composite, binned at the final time."""
    composite = compose(psi, spec.ready_state, memory_budget=spec.memory_budget)
    snapshots = evolve(composite, spec.plan, spec.duration, spec.field_times())
    starts = sample_equilibrium(density(composite), n, seed)
    provider = VelocityProvider.from_snapshots(snapshots)
    trajectories = integrate_ensemble(
        starts, provider, spec.duration, abs(spec.dt), final_only=True, workers=workers
    )
    finals = np.array([tr.final for tr in trajectories])
    labels = np.asarray(spec.result_function(finals), dtype=int)
    counts = np.bincount(labels, minlength=len(spec.bins))
    return ResultDistribution(
        spec.bins, tuple(float(c) / n for c in counts), ResultMethod.SAMPLED, sample_count=n
    )


# ── Pointer model ──

POINTER_SYSTEM_AXIS = (-16.0, 16.0, 128)
POINTER_APPARATUS_AXIS = (-24.0, 24.0, 256)


def sign_bins(points: np.ndarray) -> np.ndarray:
    """Bin 0 ("-") for pointer y < 0, bin 1 ("+") otherwise."""
    return (points[:, -1] >= 0).astype(int)


def pointer_coupling(grid: GridSpec, kick: float, dt: float) -> Potential:
    """Impulse frame over [0, dt) kicking the pointer (last axis) by +-kick with the sign of x."""
    x, y = grid.mesh()[0], grid.mesh()[-1]
    sign = np.where(x >= 0, 1.0, -1.0)
    frame = PotentialFrame(0.0, dt, -(kick / dt) * sign * y)
    return Potential(grid, np.zeros(grid.shape), frames=(frame,))


def pointer_experiment(
    *,
    kick: float = 5.0,
    pointer_width: float = 0.5,
    dt: float = 0.005,
    duration: float = 2.0,
    system_axis: tuple[float, float, int] = POINTER_SYSTEM_AXIS,
    apparatus_axis: tuple[float, float, int] = POINTER_APPARATUS_AXIS,
    workers: int | None = None,
) -> ExperimentSpec:
    """Coarse sign-of-position measurement.

    One step of V = -(kick/dt) sign(x) y gives the pointer momentum
    +kick for x >= 0 and -kick for x < 0; free flight then separates the
    pointer packets before the sign of y is read off.
    """
    system_grid = make_grid([system_axis])
    pointer_grid = make_grid([apparatus_axis])
    ready = init_field(pointer_grid, lambda y: gaussian_packet(y, 0.0, pointer_width))
    return ExperimentSpec(
        system_grid=system_grid,
        ready_state=ready,
        coupling=pointer_coupling(system_grid.product(pointer_grid), kick, dt),
        duration=duration,
        bins=("-", "+"),
        result_function=sign_bins,
        dt=dt,
        workers=workers,
    )


def position_projectors(grid: GridSpec) -> list[np.ndarray]:
    """Masks of x < 0 and x >= 0, in the order of the pointer bins."""
    x = grid.coords(0)
    return [(x < 0).astype(float), (x >= 0).astype(float)]


def pointer_system_states(grid: GridSpec, offset: float = 5.0, width: float = 0.7) -> tuple[WaveField, WaveField]:
    """Normalized left and right system packets."""
    left = init_field(grid, lambda x: gaussian_packet(x, -offset, width))
    right = init_field(grid, lambda x: gaussian_packet(x, offset, width))
    return left, right
