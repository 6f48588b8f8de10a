"""The guidance velocity field v = (hbar/m) Im(grad psi / psi): on-grid, off-grid and at nodes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from ..protocol import ConfigError, DegenerateStateError, InterpMethod
from .propagator import PropagatorPlan, step
from .wavefield import GridSpec, WaveField, density

logger = logging.getLogger(__name__)

NODE_THRESHOLD = 1e-12
TRIG_MAX_POINTS = 64
_MAX_FILL_PASSES = 64


def _derivative_wavenumbers(grid: GridSpec, axis: int) -> np.ndarray:
    k = np.array(grid.axes[axis].wavenumbers)
    n = grid.axes[axis].n
    k[n // 2] = 0.0  # odd derivative: drop the unpaired Nyquist mode
    shape = [1] * grid.dims
    shape[axis] = n
    return k.reshape(shape)


def spectral_gradient(f: WaveField) -> list[np.ndarray]:
    grads = []
    for axis in range(f.grid.dims):
        k = _derivative_wavenumbers(f.grid, axis)
        grads.append(sfft.ifft(1j * k * sfft.fft(f.amplitudes, axis=axis), axis=axis))
    return grads


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: GridSpec
    components: tuple[np.ndarray, ...]
    regularized: int = 0
    time_tag: float = 0.0
    flagged: np.ndarray | None = None

    @cached_property
    def _node_cells(self) -> np.ndarray | None:
        """Cells with at least one node-flagged corner."""
        if self.flagged is None or not self.flagged.any():
            return None
        cells = self.flagged.copy()
        for axis in range(self.grid.dims):
            cells = cells | np.roll(cells, -1, axis=axis)
        return cells

    def near_node(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells = self._node_cells
        if cells is None:
            return np.zeros(pts.shape[0], dtype=bool)
        idx = np.floor(self.grid.to_index(pts)).astype(int) % np.array(self.grid.shape)
        return cells[tuple(idx.T)]

    @cached_property
    def _coefficients(self) -> tuple[np.ndarray, ...]:
        return tuple(ndimage.spline_filter(c, order=3, mode="grid-wrap") for c in self.components)

    def at(self, points: np.ndarray) -> np.ndarray:
        """Cubic periodic interpolation at points of shape (n, dims); returns (n, dims)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = self.grid.to_index(pts).T
        out = np.empty_like(pts)
        for axis, coeff in enumerate(self._coefficients):
            out[:, axis] = ndimage.map_coordinates(coeff, idx, order=3, mode="grid-wrap", prefilter=False)
        return out


def _fill_nodes(values: np.ndarray, flagged: np.ndarray) -> np.ndarray:
    """Replace flagged entries by the mean of their unflagged axis neighbours, growing inward."""
    v = np.where(flagged, 0.0, values)
    mask = flagged.copy()
    for _ in range(_MAX_FILL_PASSES):
        if not mask.any():
            break
        known = (~mask).astype(float)
        total = np.zeros_like(v)
        weight = np.zeros_like(v)
        for axis in range(v.ndim):
            for shift in (1, -1):
                total += np.roll(v * known, shift, axis=axis)
                weight += np.roll(known, shift, axis=axis)
        fill = mask & (weight > 0)
        if not fill.any():
            break
        v = np.where(fill, total / np.where(weight > 0, weight, 1.0), v)
        mask &= ~fill
    return v


def velocity_field(f: WaveField, node_threshold: float = NODE_THRESHOLD) -> VelocityField:
    """Spectral guidance velocity with node regularization below node_threshold * peak density."""
    rho = density(f).values
    peak = float(rho.max())
    if peak == 0.0:
        raise DegenerateStateError("velocity field of an all-zero wave function")
    flagged = rho < node_threshold * peak
    safe_rho = np.where(flagged, 1.0, rho)
    psi_conj = np.conj(f.amplitudes)
    comps = []
    for grad, m in zip(spectral_gradient(f), f.grid.axis_masses):
        v = (f.grid.hbar / m) * np.imag(psi_conj * grad) / safe_rho
        if flagged.any():
            v = _fill_nodes(v, flagged)
        v.flags.writeable = False
        comps.append(v)
    count = int(flagged.sum())
    if count:
        logger.debug("Regularized %d node points at t=%.4g", count, f.time_tag)
    return VelocityField(
        f.grid, tuple(comps), regularized=count, time_tag=f.time_tag, flagged=flagged if count else None
    )


def probability_current(f: WaveField) -> list[np.ndarray]:
    """J_k = (hbar/m_k) Im(conj(psi) d_k psi), no division by the density."""
    psi_conj = np.conj(f.amplitudes)
    return [
        (f.grid.hbar / m) * np.imag(psi_conj * grad)
        for grad, m in zip(spectral_gradient(f), f.grid.axis_masses)
    ]


def continuity_residual(f: WaveField, plan: PropagatorPlan) -> float:
    """L2 norm of d(rho)/dt + div J, with d(rho)/dt from one step forward and one back."""
    forward = density(step(f, plan)).values
    backward = density(step(f, plan.reversed())).values
    rho_t = (forward - backward) / (2.0 * plan.dt)
    div = np.zeros(f.grid.shape)
    for axis, j in enumerate(probability_current(f)):
        k = _derivative_wavenumbers(f.grid, axis)
        div += np.real(sfft.ifft(1j * k * sfft.fft(j, axis=axis), axis=axis))
    return float(np.sqrt(np.sum((rho_t + div) ** 2) * f.grid.cell_volume))


def _trig_basis(grid: GridSpec, axis: int, q: np.ndarray, derivative: bool) -> np.ndarray:
    ax = grid.axes[axis]
    k = np.array(ax.wavenumbers)
    if derivative:
        k_d = k.copy()
        k_d[ax.n // 2] = 0.0
        return 1j * k_d * np.exp(1j * np.outer(q - ax.lo, k))
    return np.exp(1j * np.outer(q - ax.lo, k))


def trig_evaluate(f: WaveField, points: np.ndarray, derivative_axis: int | None = None) -> np.ndarray:
    """Exact Fourier-sum value of psi (or one partial derivative) at arbitrary points."""
    if max(f.grid.shape) > TRIG_MAX_POINTS:
        raise ConfigError(
            f"trigonometric evaluation is limited to {TRIG_MAX_POINTS} points per axis",
            field_name="method",
        )
    pts = f.grid.wrap(np.atleast_2d(np.asarray(points, dtype=float)))
    coeff = sfft.fftn(f.amplitudes) / f.grid.size
    result = np.broadcast_to(coeff, (pts.shape[0],) + coeff.shape)
    for axis in range(f.grid.dims):
        basis = _trig_basis(f.grid, axis, pts[:, axis], derivative_axis == axis)
        # contract the leading remaining axis against the per-point basis
        result = np.einsum("pk...,pk->p...", result, basis)
    return result


def velocity_at(
    f: WaveField,
    point: np.ndarray,
    method: InterpMethod | str = InterpMethod.SPLINE,
    *,
    field: VelocityField | None = None,
) -> np.ndarray:
    """Velocity vector at one configuration point (or an (n, dims) batch)."""
    pts = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise ConfigError("velocity requested at non-finite coordinates", field_name="point")
    batch = np.atleast_2d(pts)
    if InterpMethod(method) is InterpMethod.TRIG:
        psi = trig_evaluate(f, batch)
        out = np.empty(batch.shape)
        for axis, m in enumerate(f.grid.axis_masses):
            dpsi = trig_evaluate(f, batch, derivative_axis=axis)
            out[:, axis] = (f.grid.hbar / m) * np.imag(dpsi / psi)
    else:
        vf = field if field is not None else velocity_field(f)
        out = vf.at(batch)
    return out[0] if pts.ndim == 1 else out
