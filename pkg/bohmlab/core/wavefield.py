"""Grid geometry, wave-function representation, densities, inner products and marginals.

Everything here is immutable after construction: fields hand out read-only
arrays so snapshots can be shared across trajectory workers without copies.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..protocol import ConfigError, DegenerateStateError, GridMismatchError

logger = logging.getLogger(__name__)

MIN_POINTS = 16
MAX_DIMS = 3


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @cached_property
    def points(self) -> np.ndarray:
        return _readonly(self.lo + self.spacing * np.arange(self.n))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return _readonly(2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return self.lo + np.mod(np.asarray(x, dtype=float) - self.lo, self.length)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular periodic grid; each axis is the coordinate of a one-dimensional particle."""

    axes: tuple[Axis, ...]
    hbar: float = 1.0
    masses: tuple[float, ...] = (1.0,)

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacings)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a.lo for a in self.axes])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([a.length for a in self.axes])

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.lengths))

    def __post_init__(self) -> None:
        if len(self.masses) == 1 and self.dims > 1:
            object.__setattr__(self, "masses", tuple(self.masses) * self.dims)

    @property
    def axis_masses(self) -> tuple[float, ...]:
        return self.masses

    def coords(self, axis: int) -> np.ndarray:
        return self.axes[axis].points

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*(a.points for a in self.axes), indexing="ij")

    def wavenumber_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*(a.wavenumbers for a in self.axes), indexing="ij")

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Wrap configuration points of shape (..., dims) into [lo, hi) per axis."""
        pts = np.asarray(points, dtype=float)
        return self.lower + np.mod(pts - self.lower, self.lengths)

    def to_index(self, points: np.ndarray) -> np.ndarray:
        """Fractional grid index per axis, periodic in [0, n)."""
        pts = self.wrap(points)
        return (pts - self.lower) / np.array(self.spacings)

    def subgrid(self, axes: Sequence[int]) -> GridSpec:
        masses = self.axis_masses
        return GridSpec(
            axes=tuple(self.axes[i] for i in axes),
            hbar=self.hbar,
            masses=tuple(masses[i] for i in axes),
        )

    def product(self, other: GridSpec) -> GridSpec:
        if other.hbar != self.hbar:
            raise GridMismatchError(f"hbar differs between grids: {self.hbar} vs {other.hbar}")
        return GridSpec(
            axes=self.axes + other.axes,
            hbar=self.hbar,
            masses=self.axis_masses + other.axis_masses,
        )

    def require_same(self, other: GridSpec) -> None:
        if other != self:
            raise GridMismatchError(f"grid mismatch: {self.shape} vs {other.shape}")


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def make_grid(
    axes: Sequence[tuple[float, float, int]],
    hbar: float = 1.0,
    masses: Sequence[float] = (1.0,),
) -> GridSpec:
    problems: list[str] = []
    if not 1 <= len(axes) <= MAX_DIMS:
        problems.append(f"axes: {len(axes)} axes given, expected 1 to {MAX_DIMS}")
    for i, (lo, hi, n) in enumerate(axes):
        if int(n) != n or not _is_power_of_two(int(n)):
            problems.append(f"axes[{i}].n: {n} is not a power of two")
        elif n < MIN_POINTS:
            problems.append(f"axes[{i}].n: {n} is below the minimum of {MIN_POINTS}")
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            problems.append(f"axes[{i}]: lower bound {lo} must be below upper bound {hi}")
    if not hbar > 0:
        problems.append(f"hbar: {hbar} must be positive")
    if len(masses) not in (1, len(axes)):
        problems.append(f"masses: {len(masses)} entries for {len(axes)} axes")
    for i, m in enumerate(masses):
        if not m > 0:
            problems.append(f"masses[{i}]: {m} must be positive")
    if problems:
        field_name = problems[0].split(":")[0]
        raise ConfigError("; ".join(problems), field_name=field_name, problems=problems)
    return GridSpec(
        axes=tuple(Axis(float(lo), float(hi), int(n)) for lo, hi, n in axes),
        hbar=float(hbar),
        masses=tuple(float(m) for m in masses),
    )


# ── Fields ──


@dataclass(frozen=True, eq=False)
class WaveField:
    grid: GridSpec
    amplitudes: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.size != self.grid.size:
            raise GridMismatchError(
                f"amplitude count {amps.size} does not match grid size {self.grid.size}"
            )
        object.__setattr__(self, "amplitudes", _readonly(amps.reshape(self.grid.shape)))

    def with_amplitudes(self, amplitudes: np.ndarray, time_tag: float | None = None) -> WaveField:
        return WaveField(self.grid, amplitudes, self.time_tag if time_tag is None else time_tag)

    def _combine(self, other: WaveField, sign: float) -> WaveField:
        self.grid.require_same(other.grid)
        return self.with_amplitudes(self.amplitudes + sign * other.amplitudes)

    def __add__(self, other: WaveField) -> WaveField:
        return self._combine(other, 1.0)

    def __sub__(self, other: WaveField) -> WaveField:
        return self._combine(other, -1.0)

    def __mul__(self, c: complex) -> WaveField:
        return self.with_amplitudes(c * self.amplitudes)

    __rmul__ = __mul__

    def __truediv__(self, c: complex) -> WaveField:
        return self.with_amplitudes(self.amplitudes / c)


@dataclass(frozen=True, eq=False)
class DensityField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def peak(self) -> float:
        return float(self.values.max())

    def total(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)


@dataclass(frozen=True, eq=False)
class PotentialFrame:
    """Potential term active for start <= t < stop."""

    start: float
    stop: float
    values: np.ndarray

    def active(self, t: float) -> bool:
        return self.start <= t < self.stop


@dataclass(frozen=True, eq=False)
class Potential:
    grid: GridSpec
    values: np.ndarray
    frames: tuple[PotentialFrame, ...] = field(default=())

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("potential has non-finite values", field_name="potential")
        for fr in self.frames:
            if not np.all(np.isfinite(fr.values)) or np.size(fr.values) != self.grid.size:
                raise ConfigError("potential frame must be finite on the grid", field_name="potential.frames")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def time_dependent(self) -> bool:
        return bool(self.frames)

    @property
    def is_zero(self) -> bool:
        return not self.frames and not np.any(self.values)

    def active_frames(self, t: float) -> tuple[int, ...]:
        return tuple(i for i, fr in enumerate(self.frames) if fr.active(t))

    def values_at(self, t: float) -> np.ndarray:
        total = self.values
        for i in self.active_frames(t):
            total = total + np.reshape(self.frames[i].values, self.grid.shape)
        return total


def zero_potential(grid: GridSpec) -> Potential:
    return Potential(grid, np.zeros(grid.shape))


def harmonic_potential(grid: GridSpec, omega: float = 1.0, center: Sequence[float] | None = None) -> Potential:
    c = center if center is not None else [0.0] * grid.dims
    values = sum(
        0.5 * m * omega**2 * (q - c_k) ** 2
        for q, c_k, m in zip(grid.mesh(), c, grid.axis_masses)
    )
    return Potential(grid, np.asarray(values))


# ── Operations ──

Builder = Callable[..., np.ndarray]


def init_field(grid: GridSpec, builder: Builder) -> WaveField:
    """Sample builder(*mesh) on the grid and normalize; time_tag starts at 0."""
    raw = np.asarray(builder(*grid.mesh()), dtype=np.complex128)
    raw = np.broadcast_to(raw, grid.shape)
    if not np.all(np.isfinite(raw)):
        raise DegenerateStateError("builder returned non-finite amplitudes")
    return normalize(WaveField(grid, raw, 0.0))


def normalize(f: WaveField) -> WaveField:
    n = norm(f)
    if n == 0.0:
        raise DegenerateStateError("cannot normalize an all-zero field")
    return f.with_amplitudes(f.amplitudes / n)


def norm(f: WaveField) -> float:
    return math.sqrt(float(np.vdot(f.amplitudes, f.amplitudes).real) * f.grid.cell_volume)


def inner_product(a: WaveField, b: WaveField) -> complex:
    """<a, b>, conjugate-linear in a, weighted by the cell volume."""
    a.grid.require_same(b.grid)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.cell_volume)


def density(f: WaveField) -> DensityField:
    a = f.amplitudes
    return DensityField(f.grid, a.real**2 + a.imag**2)


def marginal(d: DensityField, axis: int) -> DensityField:
    """Integrate out every axis except `axis`."""
    if not 0 <= axis < d.grid.dims:
        raise IndexError(f"axis {axis} out of range for a {d.grid.dims}-axis grid")
    others = tuple(i for i in range(d.grid.dims) if i != axis)
    weight = math.prod(d.grid.spacings[i] for i in others)
    values = d.values.sum(axis=others) * weight if others else d.values
    return DensityField(d.grid.subgrid([axis]), values)


def boundary_ratio(d: DensityField, cells: int = 3) -> float:
    """Largest density within `cells` of any boundary, relative to the peak."""
    peak = d.peak
    if peak == 0.0:
        return 0.0
    worst = 0.0
    for axis in range(d.grid.dims):
        v = np.moveaxis(d.values, axis, 0)
        edge = max(float(v[:cells].max()), float(v[-cells:].max()))
        worst = max(worst, edge)
    return worst / peak


def fringe_contrast(profile: np.ndarray, floor: float = 1e-3) -> float:
    """Peak of a 1D profile over its smallest interior local minimum.

    Only minima where the profile exceeds `floor` * peak count, so the decaying
    tails of the envelope are ignored. Returns inf if no interior minimum exists.
    """
    p = np.asarray(profile, dtype=float)
    peak = float(p.max())
    inner = p[1:-1]
    is_min = (inner < p[:-2]) & (inner <= p[2:]) & (inner > floor * peak)
    if not np.any(is_min):
        return math.inf
    return peak / float(inner[is_min].min())


# ── Builders ──


def gaussian_packet(
    q: np.ndarray, center: float, sigma: float, momentum: float = 0.0, hbar: float = 1.0
) -> np.ndarray:
    """Unnormalized Gaussian exp(-(q-c)^2 / 4 sigma^2) with mean momentum `momentum`."""
    return np.exp(-((q - center) ** 2) / (4.0 * sigma**2) + 1j * momentum * q / hbar)


def plane_wave(q: np.ndarray, k: float) -> np.ndarray:
    return np.exp(1j * k * q)
