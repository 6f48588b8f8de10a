"""Conditional wave functions, projective comparison and the emergent-evolution universes.

The universal field lives on a product grid whose leading `x_axes` axes belong
to the subsystem and whose remaining axes belong to its environment.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from ..protocol import ConfigError, DegenerateStateError, GateResult, InterpMethod, PropagationError, below
from .ensemble import Trajectory, VelocityProvider, integrate_trajectory
from .guidance import TRIG_MAX_POINTS
from .propagator import apply_hamiltonian, eigen_residual, evolve, make_plan
from .wavefield import (
    GridSpec,
    Potential,
    WaveField,
    boundary_ratio,
    density,
    gaussian_packet,
    init_field,
    inner_product,
    make_grid,
    norm,
    zero_potential,
)

logger = logging.getLogger(__name__)

NODAL_RTOL = 1e-10
OVERLAP_LIMIT = 1e-8
BOUNDARY_LIMIT = 1e-6

STATIONARY_ENERGY = 2.0


# ── Conditional slices ──


@dataclass(frozen=True, eq=False)
class ConditionalSlice:
    time: float
    y_value: tuple[float, ...]
    raw: WaveField
    nodal: bool = False

    @cached_property
    def normalized(self) -> WaveField | None:
        if self.nodal:
            return None
        return self.raw / norm(self.raw)


def _split(f: WaveField, x_axes: int) -> tuple[GridSpec, GridSpec]:
    if not 1 <= x_axes < f.grid.dims:
        raise ConfigError(
            f"x_axes must leave at least one environment axis, got {x_axes} of {f.grid.dims}",
            field_name="x_axes",
        )
    dims = range(f.grid.dims)
    return f.grid.subgrid(dims[:x_axes]), f.grid.subgrid(dims[x_axes:])


def _spline_slice(f: WaveField, x_grid: GridSpec, y_index: np.ndarray) -> np.ndarray:
    x_idx = np.indices(x_grid.shape).reshape(x_grid.dims, -1).astype(float)
    y_idx = np.repeat(y_index[:, None], x_idx.shape[1], axis=1)
    coords = np.concatenate([x_idx, y_idx])
    parts = []
    for part in (f.amplitudes.real, f.amplitudes.imag):
        coeff = ndimage.spline_filter(part, order=3, mode="grid-wrap")
        parts.append(ndimage.map_coordinates(coeff, coords, order=3, mode="grid-wrap", prefilter=False))
    return (parts[0] + 1j * parts[1]).reshape(x_grid.shape)


def _trig_slice(f: WaveField, x_axes: int, y_grid: GridSpec, y: np.ndarray) -> np.ndarray:
    if max(y_grid.shape) > TRIG_MAX_POINTS:
        raise ConfigError(
            f"trigonometric evaluation is limited to {TRIG_MAX_POINTS} points per axis",
            field_name="method",
        )
    y_dims = tuple(range(x_axes, f.grid.dims))
    coeff = sfft.fftn(f.amplitudes, axes=y_dims) / y_grid.size
    for ax, q in zip(y_grid.axes, y):
        basis = np.exp(1j * np.array(ax.wavenumbers) * (q - ax.lo))
        coeff = np.tensordot(coeff, basis, axes=([x_axes], [0]))
    return coeff


def conditional_wavefunction(
    f: WaveField,
    y_value: Sequence[float] | float,
    *,
    x_axes: int = 1,
    method: InterpMethod | str = InterpMethod.SPLINE,
) -> ConditionalSlice:
    """psi(x) = Psi(x, Y) on the subsystem grid, not normalized."""
    x_grid, y_grid = _split(f, x_axes)
    y = np.atleast_1d(np.asarray(y_value, dtype=float))
    if y.shape != (y_grid.dims,):
        raise ConfigError(f"y_value needs {y_grid.dims} coordinates, got {y.size}", field_name="y_value")
    lo, hi = y_grid.lower, y_grid.lower + y_grid.lengths
    if not np.all(np.isfinite(y)) or np.any(y < lo) or np.any(y > hi):
        raise ConfigError(f"y_value {y.tolist()} lies outside the environment domain", field_name="y_value")

    if InterpMethod(method) is InterpMethod.TRIG:
        amps = _trig_slice(f, x_axes, y_grid, y)
    else:
        amps = _spline_slice(f, x_grid, y_grid.to_index(y))

    raw = WaveField(x_grid, amps, f.time_tag)
    nodal = norm(raw) < NODAL_RTOL * norm(f) * math.sqrt(y_grid.cell_volume)
    if nodal:
        logger.info("Nodal environment point y=%s at t=%.4g", y.tolist(), f.time_tag)
    return ConditionalSlice(time=f.time_tag, y_value=tuple(float(v) for v in y), raw=raw, nodal=nodal)


def projective_distance(a: WaveField, b: WaveField) -> float:
    """1 - |<a, b>| / (|a| |b|); zero iff a and b differ by a complex scalar."""
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateStateError("projective distance of a zero field")
    overlap = abs(inner_product(a, b)) / (na * nb)
    return float(min(1.0, max(0.0, 1.0 - overlap)))


def schrodinger_residual(slices: Sequence[WaveField], potential: Potential | None = None) -> list[float]:
    """||i d(psi)/dt - H psi|| / ||psi|| at each interior slice, by central differences in time."""
    out: list[float] = []
    for before, current, after in zip(slices, slices[1:], slices[2:]):
        span = after.time_tag - before.time_tag
        if span <= 0:
            raise ConfigError("slice times must be increasing", field_name="slices")
        v = potential if potential is not None else zero_potential(current.grid)
        dpsi = (after.amplitudes - before.amplitudes) / span
        hpsi = apply_hamiltonian(current, v)
        out.append(norm(current.with_amplitudes(1j * dpsi) - hpsi) / norm(current))
    return out


# ── Reports ──


@dataclass(frozen=True)
class EmergenceEntry:
    time: float
    y_value: tuple[float, ...]
    distance: float | None
    residual: float | None = None
    tracking_error: float = 0.0
    branch: str = ""

    @property
    def nodal(self) -> bool:
        return self.distance is None


@dataclass
class EmergenceReport:
    scenario: str
    entries: list[EmergenceEntry] = field(default_factory=list)
    trajectory: Trajectory | None = None
    eigen_residual: float | None = None
    tracking_limit: float = 0.0
    regularized_points: int = 0

    @property
    def max_distance(self) -> float:
        return max((e.distance for e in self.entries if e.distance is not None), default=math.nan)

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries if e.residual is not None), default=0.0)

    @property
    def max_tracking_error(self) -> float:
        return max((e.tracking_error for e in self.entries), default=math.nan)

    @property
    def nodal_times(self) -> list[float]:
        return [e.time for e in self.entries if e.nodal]

    @property
    def branch(self) -> str:
        return self.entries[0].branch if self.entries else ""

    def gates(self, distance_limit: float, residual_limit: float | None = None) -> list[GateResult]:
        """Distance and tracking gates; with no evaluated sample both are NaN and fail."""
        detail = self.scenario if self.entries else f"{self.scenario}: no samples"
        gates = [
            below("projective_distance", self.max_distance, distance_limit, detail),
            below("tracking_error", self.max_tracking_error, self.tracking_limit, detail),
        ]
        if residual_limit is not None and any(e.residual is not None for e in self.entries):
            gates.append(below("schrodinger_residual", self.max_residual, residual_limit, self.scenario))
        return gates

    def print_summary(self) -> None:
        print(f"\n{'='*60}")
        print(f"  EMERGENCE: {self.scenario}")
        print(f"{'='*60}")
        if self.eigen_residual is not None:
            print(f"  Eigen residual:       {self.eigen_residual:.3e}")
        if self.branch:
            print(f"  Branch:               {self.branch}")
        print(f"  Sample times:         {len(self.entries)}")
        print(f"  Max distance:         {self.max_distance:.3e}")
        print(f"  Max residual:         {self.max_residual:.3e}")
        print(f"  Max tracking error:   {self.max_tracking_error:.3e}")
        if self.nodal_times:
            print(f"  Nodal times:          {len(self.nodal_times)}")
        print(f"{'='*60}\n")

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "branch": self.branch,
            "eigen_residual": self.eigen_residual,
            "max_distance": self.max_distance,
            "max_residual": self.max_residual,
            "max_tracking_error": self.max_tracking_error,
            "nodal_times": self.nodal_times,
            "regularized_points": self.regularized_points,
            "entries": [
                {
                    "time": e.time,
                    "y": list(e.y_value),
                    "distance": e.distance,
                    "residual": e.residual,
                    "tracking_error": e.tracking_error,
                }
                for e in self.entries
            ],
        }


# ── Stationary universe ──


def stationary_universe_state(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """e^{i(x-y)} cos(x+y): an H eigenfunction with E = 2 that is not a product state."""
    return np.exp(1j * (x - y)) * np.cos(x + y)


def stationary_universe_grid(points: int = 64) -> GridSpec:
    return make_grid([(0.0, 2.0 * math.pi, points), (0.0, 2.0 * math.pi, points)])


def emergent_reference(x_grid: GridSpec, y0: float, t: float) -> WaveField:
    """Closed-form free evolution of the conditional state started at e^{ix} cos(x + y0)."""
    x = x_grid.coords(0)
    amps = np.exp(-2j * t) * np.exp(1j * (x + t)) * np.cos(x + y0 - t)
    f = WaveField(x_grid, amps, t)
    return f / norm(f)


def _periodic_gap(a: float, b: float, length: float) -> float:
    return abs((a - b + 0.5 * length) % length - 0.5 * length)


def _lattice(times: Sequence[float], dt: float) -> list[float]:
    return sorted({round(round(t / dt) * dt, 12) for t in times})


def _by_time(fields: Sequence[WaveField]) -> dict[float, WaveField]:
    return {round(f.time_tag, 12): f for f in fields}


def snapshot_lattice(sample_times: Sequence[float], t_final: float, dt: float, spacing: int = 10) -> list[float]:
    """Field times on the dt lattice: every `spacing` steps, t_final, and the three-point stencil of each sample."""
    step = spacing * dt
    lattice = [k * step for k in range(int(t_final // step) + 1)] + [t_final]
    stencil = [s for t in sample_times for s in (t - dt, t, t + dt) if -1e-12 <= s <= t_final + 1e-12]
    return _lattice(lattice + stencil, dt)


def run_stationary_universe(
    x0: float,
    y0: float,
    t_final: float,
    sample_times: Sequence[float] | None = None,
    *,
    dt: float = 1e-3,
    points: int = 64,
    method: InterpMethod | str = InterpMethod.TRIG,
    tracking_tolerance: float = 1e-6,
    workers: int | None = None,
) -> EmergenceReport:
    """Guide (X, Y) with the stationary two-particle field and compare x-slices at Y(t) with free evolution."""
    grid = stationary_universe_grid(points)
    psi = init_field(grid, stationary_universe_state)
    residual = eigen_residual(psi, zero_potential(grid), STATIONARY_ENERGY)
    logger.info("Stationary universe: eigen residual %.3e", residual)

    times = _lattice(sample_times if sample_times is not None else np.linspace(0.0, t_final, 50), dt)
    if times and (times[0] < 0 or times[-1] > t_final + 0.5 * dt):
        raise ConfigError("sample times must lie in [0, t_final]", field_name="sample_times")
    plan = make_plan(grid, dt, workers=workers)
    fields = _by_time(evolve(psi, plan, t_final, snapshot_lattice(times, t_final, dt)))

    provider = VelocityProvider.from_snapshots(list(fields.values()))
    traj = integrate_trajectory(np.array([x0, y0]), provider, t_final, dt)
    length_y = grid.lengths[1]

    def slice_at(t: float) -> ConditionalSlice:
        return conditional_wavefunction(fields[t], [traj.position_at(t)[1]], method=method)

    report = EmergenceReport(
        scenario="stationary_universe",
        trajectory=traj,
        eigen_residual=residual,
        tracking_limit=tracking_tolerance,
        regularized_points=provider.regularized,
    )
    x_grid = grid.subgrid([0])
    for t in times:
        s = slice_at(t)
        dist = None if s.nodal else projective_distance(s.raw, emergent_reference(x_grid, y0, t))
        res = None
        before, after = round(t - dt, 12), round(t + dt, 12)
        if before in fields and after in fields and not s.nodal:
            res = schrodinger_residual([slice_at(before).raw, s.raw, slice_at(after).raw])[0]
        report.entries.append(
            EmergenceEntry(
                time=t,
                y_value=s.y_value,
                distance=dist,
                residual=res,
                tracking_error=_periodic_gap(s.y_value[0], y0 - t, length_y),
            )
        )
    return report


# ── Branching universe ──


Builder = Callable[[np.ndarray], np.ndarray]

BRANCH_X_AXIS = (-16.0, 16.0, 128)
BRANCH_Y_AXIS = (-25.0, 25.0, 256)


def _default_x_states() -> tuple[Builder, Builder]:
    return (
        lambda x: gaussian_packet(x, -2.0, 1.0, momentum=1.0),
        lambda x: gaussian_packet(x, 2.0, 1.0, momentum=-1.0),
    )


def packet_width(sigma: float, t: float, hbar: float = 1.0, mass: float = 1.0) -> float:
    """Position spread of a free Gaussian packet at time t."""
    return sigma * math.sqrt(1.0 + (hbar * t / (2.0 * mass * sigma**2)) ** 2)


def _mean_position(f: WaveField) -> float:
    rho = density(f).values
    return float(np.sum(f.grid.coords(0) * rho) / np.sum(rho))


def branching_universe_grid(
    x_axis: tuple[float, float, int] = BRANCH_X_AXIS, y_axis: tuple[float, float, int] = BRANCH_Y_AXIS
) -> GridSpec:
    return make_grid([x_axis, y_axis])


def branching_universe_state(
    grid: GridSpec,
    centers: Sequence[float],
    widths: Sequence[float],
    velocities: Sequence[float],
    x_states: Sequence[Builder] | None = None,
) -> tuple[WaveField, list[WaveField]]:
    """Normalized sum of psi_a(x) phi_a(y) over two narrow y-packets, plus the x-states psi_a."""
    if grid.dims != 2:
        raise ConfigError("branching universe needs one x axis and one y axis", field_name="axes")
    if not len(centers) == len(widths) == len(velocities) == 2:
        raise ConfigError("branching universe takes exactly two packets", field_name="centers")
    builders = tuple(x_states) if x_states is not None else _default_x_states()
    if len(builders) != 2:
        raise ConfigError("branching universe takes exactly two x-states", field_name="x_states")

    x_grid, y_grid = grid.subgrid([0]), grid.subgrid([1])
    m_y = y_grid.axis_masses[0]
    psis = [init_field(x_grid, b) for b in builders]
    phis = [
        init_field(y_grid, lambda y, c=c, w=w, v=v: gaussian_packet(y, c, w, momentum=v * m_y, hbar=grid.hbar))
        for c, w, v in zip(centers, widths, velocities)
    ]
    overlap = abs(inner_product(phis[0], phis[1]))
    if overlap >= OVERLAP_LIMIT:
        raise ConfigError(f"environment packets are not disjoint: overlap {overlap:.3e}", field_name="centers")

    amps = sum(np.multiply.outer(p.amplitudes, q.amplitudes) for p, q in zip(psis, phis))
    universe = WaveField(grid, amps)
    return universe / norm(universe), psis


def run_branching_universe(
    centers: Sequence[float] = (4.0, -4.0),
    widths: Sequence[float] = (0.4, 0.4),
    velocities: Sequence[float] = (3.0, -3.0),
    t_final: float = 2.0,
    *,
    x_states: Sequence[Builder] | None = None,
    y0: float | None = None,
    grid: GridSpec | None = None,
    dt: float = 0.005,
    sample_every: float = 0.05,
    tracking_widths: float = 3.0,
    workers: int | None = None,
) -> EmergenceReport:
    """Two narrow environment packets carrying distinct subsystem states.

    Y(0) picks a branch; the report tracks Y(t) against the branch packet's
    centre and compares each x-slice with the branch state evolved on its own.
    """
    grid = grid if grid is not None else branching_universe_grid()
    universe, psis = branching_universe_state(grid, centers, widths, velocities, x_states)
    x_grid, y_grid = grid.subgrid([0]), grid.subgrid([1])

    start_y = y0 if y0 is not None else centers[0] + 0.5 * widths[0]
    alpha = int(np.argmin([abs(start_y - c) for c in centers]))
    label = "upper" if centers[alpha] == max(centers) else "lower"
    start = np.array([_mean_position(psis[alpha]), start_y])

    steps = max(1, round(sample_every / dt))
    n_samples = round(t_final / (steps * dt))
    times = [round(k * steps * dt, 12) for k in range(n_samples + 1)]
    plan = make_plan(grid, dt, workers=workers)
    fields = _by_time(evolve(universe, plan, t_final, times))
    final = fields[max(fields)]
    if boundary_ratio(density(final)) > BOUNDARY_LIMIT:
        raise PropagationError("branching universe leaked density to the domain boundary")
    reference = _by_time(evolve(psis[alpha], make_plan(x_grid, dt), t_final, times))

    provider = VelocityProvider.from_snapshots(list(fields.values()))
    traj = integrate_trajectory(start, provider, t_final, dt)
    logger.info("Branching universe: Y(0)=%.3f follows the %s packet", start_y, label)

    mass_y = y_grid.axis_masses[0]
    report = EmergenceReport(
        scenario="branching_universe",
        trajectory=traj,
        tracking_limit=tracking_widths,
        regularized_points=provider.regularized,
    )
    for t in times:
        y = traj.position_at(t)[1]
        s = conditional_wavefunction(fields[t], [y])
        dist = None if s.nodal else projective_distance(s.raw, reference[t])
        centre = centers[alpha] + velocities[alpha] * t
        width = packet_width(widths[alpha], t, grid.hbar, mass_y)
        report.entries.append(
            EmergenceEntry(
                time=t,
                y_value=s.y_value,
                distance=dist,
                tracking_error=_periodic_gap(y, centre, y_grid.lengths[0]) / width,
                branch=label,
            )
        )
    return report
