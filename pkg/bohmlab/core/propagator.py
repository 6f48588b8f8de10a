"""Strang-split spectral propagation of wave fields and Hamiltonian application."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy import fft as sfft

from ..protocol import ConfigError
from .wavefield import GridSpec, Potential, WaveField, norm, zero_potential

logger = logging.getLogger(__name__)

# Relative slack when deciding whether a requested time already sits on the step lattice.
LATTICE_RTOL = 1e-9


def kinetic_frequencies(grid: GridSpec) -> np.ndarray:
    """K/hbar per wavenumber: sum_k hbar k^2 / 2 m_k."""
    ks = grid.wavenumber_mesh()
    return sum(grid.hbar * k**2 / (2.0 * m) for k, m in zip(ks, grid.axis_masses))


@dataclass(frozen=True, eq=False)
class PropagatorPlan:
    grid: GridSpec
    dt: float
    potential: Potential
    kinetic_phase: np.ndarray
    half_phases: Mapping[tuple[int, ...], np.ndarray] = field(default_factory=dict, repr=False)
    workers: int | None = None

    def half_potential_phase(self, t_mid: float) -> np.ndarray | None:
        """exp(-i V(t_mid) dt / 2 hbar) for the frames active at t_mid; None when V = 0."""
        if self.potential.is_zero:
            return None
        return self.half_phases[self.potential.active_frames(t_mid)]

    def reversed(self) -> PropagatorPlan:
        return make_plan(self.grid, -self.dt, self.potential, workers=self.workers)


def _half_phases(potential: Potential, dt: float, hbar: float) -> Mapping[tuple[int, ...], np.ndarray]:
    """One read-only half-step phase per distinct set of active frames."""
    if potential.is_zero:
        return MappingProxyType({})
    times = [0.0]
    if potential.time_dependent:
        edges = sorted({fr.start for fr in potential.frames} | {fr.stop for fr in potential.frames})
        times = [edges[0] - 1.0, edges[-1] + 1.0] + [0.5 * (a + b) for a, b in zip(edges, edges[1:])]
    phases: dict[tuple[int, ...], np.ndarray] = {}
    for t in times:
        key = potential.active_frames(t)
        if key not in phases:
            phase = np.exp(-0.5j * potential.values_at(t) * dt / hbar)
            phase.flags.writeable = False
            phases[key] = phase
    return MappingProxyType(phases)


def make_plan(
    grid: GridSpec,
    dt: float,
    potential: Potential | None = None,
    *,
    workers: int | None = None,
) -> PropagatorPlan:
    """Precompute the kinetic multipliers; a negative dt yields a backward plan."""
    if not math.isfinite(dt) or dt == 0.0:
        raise ConfigError(f"dt must be finite and nonzero, got {dt}", field_name="dt")
    potential = potential if potential is not None else zero_potential(grid)
    grid.require_same(potential.grid)
    omega = kinetic_frequencies(grid)
    omega_max = float(omega.max())
    if abs(dt) * omega_max >= 2.0 * math.pi:
        raise ConfigError(
            f"dt exceeds spectral stability bound: |dt| * {omega_max:.4g} >= 2*pi",
            field_name="dt",
        )
    return PropagatorPlan(
        grid=grid,
        dt=float(dt),
        potential=potential,
        kinetic_phase=np.exp(-1j * omega * dt),
        half_phases=_half_phases(potential, float(dt), grid.hbar),
        workers=workers,
    )


def _advance(psi: np.ndarray, t: float, plan: PropagatorPlan) -> np.ndarray:
    half = plan.half_potential_phase(t + 0.5 * plan.dt)
    if half is not None:
        psi = half * psi
    psi = sfft.ifftn(plan.kinetic_phase * sfft.fftn(psi, workers=plan.workers), workers=plan.workers)
    if half is not None:
        psi = half * psi
    return psi


def step(f: WaveField, plan: PropagatorPlan) -> WaveField:
    f.grid.require_same(plan.grid)
    return WaveField(f.grid, _advance(f.amplitudes, f.time_tag, plan), f.time_tag + plan.dt)


def _lattice_steps(t: float, dt: float, what: str) -> int:
    k = round(t / dt)
    if abs(k * dt - t) > LATTICE_RTOL * max(1.0, abs(t)):
        logger.warning("%s %.6g is not a multiple of dt=%.6g; rounded to %.6g", what, t, dt, k * dt)
    return int(k)


def evolve(
    f: WaveField,
    plan: PropagatorPlan,
    t_final: float,
    snapshot_times: Sequence[float] = (),
) -> list[WaveField]:
    """Evolve for elapsed time t_final, returning a field per snapshot time.

    Times are measured from f.time_tag. The final field is appended when
    t_final is not itself a snapshot time; evolving by 0 returns [f].
    """
    f.grid.require_same(plan.grid)
    if t_final < 0:
        raise ConfigError(f"t_final must be nonnegative, got {t_final}", field_name="t_final")
    times = [float(t) for t in snapshot_times]
    if any(t < 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ConfigError("snapshot times must be nonnegative and nondecreasing", field_name="snapshot_times")
    if times and times[-1] > t_final * (1 + LATTICE_RTOL) + LATTICE_RTOL:
        raise ConfigError(
            f"snapshot time {times[-1]} is beyond t_final {t_final}", field_name="snapshot_times"
        )

    h = abs(plan.dt)
    n_total = _lattice_steps(t_final, h, "t_final")
    targets = [_lattice_steps(t, h, "snapshot time") for t in times]
    if not targets or targets[-1] != n_total:
        targets.append(n_total)

    logger.debug("Evolving %d steps of dt=%.4g (%d snapshots)", n_total, plan.dt, len(targets))
    out: list[WaveField] = []
    psi = f.amplitudes
    t0 = f.time_tag
    done = 0
    for target in targets:
        while done < target:
            psi = _advance(psi, t0 + done * plan.dt, plan)
            done += 1
        out.append(f if done == 0 else WaveField(f.grid, psi, t0 + done * plan.dt))
    return out


def apply_hamiltonian(f: WaveField, v: Potential) -> WaveField:
    """H f with the spectral Laplacian and the potential at f.time_tag."""
    f.grid.require_same(v.grid)
    kinetic = f.grid.hbar * kinetic_frequencies(f.grid)
    hpsi = sfft.ifftn(kinetic * sfft.fftn(f.amplitudes))
    hpsi = hpsi + v.values_at(f.time_tag) * f.amplitudes
    return f.with_amplitudes(hpsi)


def eigen_residual(f: WaveField, v: Potential, E: float) -> float:
    """||H f - E f|| / ||f||."""
    hf = apply_hamiltonian(f, v)
    return norm(hf - E * f) / norm(f)
