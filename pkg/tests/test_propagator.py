"""Split-step propagation, Hamiltonian application and eigen residuals."""

from __future__ import annotations

import numpy as np
import pytest

from bohmlab.core.propagator import apply_hamiltonian, eigen_residual, evolve, make_plan, step
from bohmlab.core.subsystem import projective_distance
from bohmlab.core.wavefield import (
    Potential,
    PotentialFrame,
    density,
    gaussian_packet,
    harmonic_potential,
    init_field,
    make_grid,
    norm,
    plane_wave,
    zero_potential,
)
from bohmlab.protocol import ConfigError, GridMismatchError


class TestMakePlan:
    def test_kinetic_phase_is_unimodular(self, slit_grid):
        plan = make_plan(slit_grid, 0.01)
        np.testing.assert_allclose(np.abs(plan.kinetic_phase), 1.0, atol=1e-15)

    def test_stability_bound(self, line_grid):
        # k_max = pi / dx = 12.8 pi, so omega_max ~ 808
        with pytest.raises(ConfigError) as exc:
            make_plan(line_grid, 0.01)
        assert "dt exceeds spectral stability bound" in str(exc.value)
        assert exc.value.field_name == "dt"

    def test_zero_dt(self, ring_grid):
        with pytest.raises(ConfigError):
            make_plan(ring_grid, 0.0)

    def test_potential_on_other_grid(self, ring_grid, line_grid):
        with pytest.raises(GridMismatchError):
            make_plan(ring_grid, 0.001, zero_potential(line_grid))

    def test_reversed(self, ring_grid):
        plan = make_plan(ring_grid, 0.01)
        assert plan.reversed().dt == -0.01

    def test_half_phases_precomputed_per_frame_set(self, line_grid):
        dt = 0.001
        static = harmonic_potential(line_grid).values
        frame = PotentialFrame(0.0, 0.01, np.ones(line_grid.shape))
        plan = make_plan(line_grid, dt, Potential(line_grid, static, frames=(frame,)))
        assert set(plan.half_phases) == {(), (0,)}
        np.testing.assert_allclose(plan.half_potential_phase(0.005), np.exp(-0.5j * (static + 1.0) * dt))
        assert plan.half_potential_phase(0.5) is plan.half_phases[()]
        with pytest.raises(ValueError):
            plan.half_phases[()][0] = 0.0
        with pytest.raises(TypeError):
            plan.half_phases[(1,)] = plan.half_phases[()]  # type: ignore[index]

    def test_zero_potential_has_no_phases(self, ring_grid):
        plan = make_plan(ring_grid, 0.01)
        assert plan.half_potential_phase(0.0) is None
        assert len(plan.half_phases) == 0


class TestStep:
    def test_preserves_norm(self, gaussian, line_grid):
        plan = make_plan(line_grid, 0.005)
        after = step(gaussian, plan)
        assert norm(after) == pytest.approx(1.0, abs=1e-13)
        assert after.time_tag == pytest.approx(0.005)

    def test_plane_wave_gains_global_phase(self, ring_grid):
        dt, k = 0.01, 3.0
        f = init_field(ring_grid, lambda x: plane_wave(x, k))
        after = step(f, make_plan(ring_grid, dt))
        np.testing.assert_allclose(after.amplitudes, np.exp(-0.5j * k**2 * dt) * f.amplitudes, atol=1e-13)
        np.testing.assert_allclose(density(after).values, density(f).values, atol=1e-13)

    def test_universe_is_stationary(self, universe, torus_grid):
        dt = 1e-3
        after = step(universe, make_plan(torus_grid, dt))
        np.testing.assert_allclose(after.amplitudes, np.exp(-2j * dt) * universe.amplitudes, atol=1e-10)

    def test_grid_mismatch(self, gaussian, ring_grid):
        with pytest.raises(GridMismatchError):
            step(gaussian, make_plan(ring_grid, 0.01))


class TestEvolve:
    def test_zero_time_returns_input(self, gaussian, line_grid):
        out = evolve(gaussian, make_plan(line_grid, 0.005), 0.0)
        assert out == [gaussian]

    def test_snapshots_and_final(self, gaussian, line_grid):
        out = evolve(gaussian, make_plan(line_grid, 0.005), 1.0, [0.0, 0.5])
        assert [f.time_tag for f in out] == pytest.approx([0.0, 0.5, 1.0])

    def test_rounds_off_lattice_times(self, gaussian, line_grid, caplog):
        out = evolve(gaussian, make_plan(line_grid, 0.005), 0.1, [0.0521])
        assert out[0].time_tag == pytest.approx(0.05)
        assert "not a multiple of dt" in caplog.text

    def test_rejects_negative_time(self, gaussian, line_grid):
        with pytest.raises(ConfigError):
            evolve(gaussian, make_plan(line_grid, 0.005), -1.0)

    def test_rejects_decreasing_snapshots(self, gaussian, line_grid):
        with pytest.raises(ConfigError):
            evolve(gaussian, make_plan(line_grid, 0.005), 1.0, [0.5, 0.2])

    def test_universe_stays_projectively_fixed(self, universe, torus_grid):
        final = evolve(universe, make_plan(torus_grid, 1e-3), 1.0)[-1]
        assert projective_distance(final, universe) < 1e-9

    def test_unitarity_over_many_steps(self, ring_grid):
        f = init_field(ring_grid, lambda x: gaussian_packet(x, 3.0, 0.6, momentum=2.0))
        final = evolve(f, make_plan(ring_grid, 1e-3), 10.0)[-1]
        assert abs(norm(final) - 1.0) < 1e-9

    def test_time_reversal(self, gaussian, line_grid):
        plan = make_plan(line_grid, 0.002, harmonic_potential(line_grid, 0.5))
        forward = evolve(gaussian, plan, 1.0)[-1]
        back = evolve(forward, plan.reversed(), 1.0)[-1]
        np.testing.assert_allclose(back.amplitudes, gaussian.amplitudes, atol=1e-8)

    def test_second_order_convergence(self):
        grid = make_grid([(-10.0, 10.0, 128)])
        v = harmonic_potential(grid, 1.0)
        f = init_field(grid, lambda x: gaussian_packet(x, 1.0, 0.8, momentum=0.5))
        t, dt = 1.0, 0.02
        reference = evolve(f, make_plan(grid, dt / 8, v), t)[-1]
        coarse = evolve(f, make_plan(grid, dt, v), t)[-1]
        fine = evolve(f, make_plan(grid, dt / 2, v), t)[-1]
        ratio = norm(coarse - reference) / norm(fine - reference)
        assert 3.2 <= ratio <= 4.8

    def test_impulse_frame_kicks_momentum(self):
        grid = make_grid([(-20.0, 20.0, 256)])
        dt, kick = 0.005, 2.0
        x = grid.coords(0)
        v = Potential(grid, np.zeros(grid.shape), frames=(PotentialFrame(0.0, dt, -(kick / dt) * x),))
        f = init_field(grid, lambda q: gaussian_packet(q, 0.0, 1.0))
        after = step(f, make_plan(grid, dt, v))
        k = grid.axes[0].wavenumbers
        spectrum = np.abs(np.fft.fft(after.amplitudes)) ** 2
        mean_k = float(np.sum(k * spectrum) / np.sum(spectrum))
        assert mean_k == pytest.approx(kick, abs=1e-6)


class TestHamiltonian:
    def test_universe_eigenrelation(self, universe, torus_grid):
        hf = apply_hamiltonian(universe, zero_potential(torus_grid))
        assert norm(hf - 2.0 * universe) / norm(universe) < 1e-8

    def test_plane_wave_eigenvalue(self, ring_grid):
        k = 5.0
        f = init_field(ring_grid, lambda x: plane_wave(x, k))
        hf = apply_hamiltonian(f, zero_potential(ring_grid))
        np.testing.assert_allclose(hf.amplitudes, 0.5 * k**2 * f.amplitudes, atol=1e-10)

    def test_linear(self, gaussian, line_grid, rng):
        g = init_field(line_grid, lambda x: gaussian_packet(x, 2.0, 0.7))
        v = harmonic_potential(line_grid, 0.3)
        a, b = 0.3 - 1.2j, 2.0 + 0.5j
        lhs = apply_hamiltonian(a * gaussian + b * g, v)
        rhs = a * apply_hamiltonian(gaussian, v) + b * apply_hamiltonian(g, v)
        np.testing.assert_allclose(lhs.amplitudes, rhs.amplitudes, atol=1e-12)

    @pytest.mark.parametrize("energy, expected", [(2.0, 0.0), (0.0, 2.0)])
    def test_eigen_residual(self, universe, torus_grid, energy, expected):
        assert eigen_residual(universe, zero_potential(torus_grid), energy) == pytest.approx(expected, abs=1e-8)

    def test_plane_wave_residual(self, ring_grid):
        f = init_field(ring_grid, lambda x: plane_wave(x, 2.0))
        assert eigen_residual(f, zero_potential(ring_grid), 2.0) < 1e-10
