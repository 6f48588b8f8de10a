"""Equilibrium sampling, trajectory integration, equivariance and path geometry."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from bohmlab.core.ensemble import (
    Trajectory,
    TrajectoryEnsemble,
    VelocityProvider,
    axis_crossings,
    equivariance_report,
    integrate_ensemble,
    integrate_trajectory,
    ks_threshold,
    marginal_cdf,
    ordering_violations,
    plane_crossings,
    run_ensemble,
    sample_equilibrium,
    sample_uniform_in_slits,
    trajectory_stream,
)
from bohmlab.core.propagator import evolve, make_plan
from bohmlab.core.subsystem import packet_width
from bohmlab.core.wavefield import density, gaussian_packet, init_field, make_grid, plane_wave
from bohmlab.protocol import ConfigError, InitRule, IntegrationError, TimeMismatchError


def _ensemble(paths: list[np.ndarray], times: np.ndarray) -> TrajectoryEnsemble:
    trajectories = [
        Trajectory(index=i, times=times, positions=p, unwrapped=p) for i, p in enumerate(paths)
    ]
    return TrajectoryEnsemble(trajectories=trajectories, seed=0, scenario_id="synthetic")


class TestStreams:
    def test_deterministic(self):
        a = trajectory_stream(7, 3).random(5)
        b = trajectory_stream(7, 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_independent_per_index_and_seed(self):
        base = trajectory_stream(7, 3).random(5)
        assert not np.array_equal(base, trajectory_stream(7, 4).random(5))
        assert not np.array_equal(base, trajectory_stream(8, 3).random(5))

    def test_threshold(self):
        assert ks_threshold(10_000) == pytest.approx(0.0163)


class TestSampling:
    def test_equilibrium_matches_marginals(self, two_slit):
        d = density(two_slit)
        pts = sample_equilibrium(d, 4000, seed=11)
        assert pts.shape == (4000, 2)
        for axis in (0, 1):
            ks = stats.kstest(pts[:, axis], marginal_cdf(d, axis)).statistic
            assert ks < ks_threshold(4000)

    def test_uniform_density(self, ring_grid):
        f = init_field(ring_grid, lambda x: np.ones_like(x))
        pts = sample_equilibrium(density(f), 2000, seed=3)[:, 0]
        assert stats.kstest(pts / ring_grid.lengths[0], "uniform").statistic < ks_threshold(2000)

    def test_same_seed_same_points(self, gaussian):
        d = density(gaussian)
        np.testing.assert_array_equal(sample_equilibrium(d, 50, 5), sample_equilibrium(d, 50, 5))
        assert not np.array_equal(sample_equilibrium(d, 50, 5), sample_equilibrium(d, 50, 6))

    def test_prefix_stable(self, gaussian):
        # trajectory i draws from its own stream, so growing n keeps earlier points
        d = density(gaussian)
        np.testing.assert_array_equal(sample_equilibrium(d, 20, 5), sample_equilibrium(d, 40, 5)[:20])

    def test_rejects_empty_ensemble(self, gaussian):
        with pytest.raises(ConfigError, match="ensemble size must be >= 1"):
            sample_equilibrium(density(gaussian), 0, 1)

    def test_uniform_in_slits(self, slit_grid):
        slits = ((-3.4, -0.6), (0.6, 3.4))
        pts = sample_uniform_in_slits(slit_grid, slits, 500, seed=2)
        assert np.all(pts[:, 0] == 0.0)
        y = pts[:, 1]
        inside = ((y >= -3.4) & (y <= -0.6)) | ((y >= 0.6) & (y <= 3.4))
        assert inside.all()
        assert 0.4 < np.mean(y > 0) < 0.6

    def test_slits_need_width(self, slit_grid):
        with pytest.raises(ConfigError):
            sample_uniform_in_slits(slit_grid, ((1.0, 1.0),), 10, seed=0)


class TestIntegration:
    def test_plane_wave_moves_uniformly(self, ring_grid):
        f = init_field(ring_grid, lambda x: plane_wave(x, 2.0))
        provider = VelocityProvider.from_snapshots([f])
        tr = integrate_trajectory(np.array([1.0]), provider, 2.0, 0.01)
        np.testing.assert_allclose(tr.unwrapped[:, 0], 1.0 + 2.0 * tr.times, atol=1e-10)
        assert np.all(tr.positions[:, 0] < ring_grid.lengths[0])
        assert tr.final[0] == pytest.approx((1.0 + 4.0) % (2 * np.pi))

    def test_universe_environment_path(self, universe):
        provider = VelocityProvider.from_snapshots([universe])
        tr = integrate_trajectory(np.array([1.0, 0.5]), provider, 5.0, 1e-3, record_every=100)
        np.testing.assert_allclose(tr.unwrapped[:, 1], 0.5 - tr.times, atol=1e-6)
        assert tr.clamp_events == 0

    def test_provider_interpolates_in_time(self, ring_grid):
        a = init_field(ring_grid, lambda x: plane_wave(x, 1.0))
        b = init_field(ring_grid, lambda x: plane_wave(x, 3.0))
        b = b.with_amplitudes(b.amplitudes, time_tag=1.0)
        provider = VelocityProvider.from_snapshots([b, a])
        pts = np.array([[0.4]])
        assert provider(0.5, pts)[0, 0] == pytest.approx(2.0, abs=1e-8)
        assert provider(2.0, pts)[0, 0] == pytest.approx(3.0, abs=1e-8)

    def test_duplicate_snapshot_times(self, ring_grid):
        f = init_field(ring_grid, lambda x: plane_wave(x, 1.0))
        with pytest.raises(ConfigError):
            VelocityProvider.from_snapshots([f, f])

    def test_worker_count_does_not_change_paths(self, two_slit):
        provider = VelocityProvider.from_snapshots([two_slit])
        starts = sample_equilibrium(density(two_slit), 600, seed=9)
        serial = integrate_ensemble(starts, provider, 0.5, 0.01)
        threaded = integrate_ensemble(starts, provider, 0.5, 0.01, workers=4)
        for a, b in zip(serial, threaded):
            assert a.index == b.index
            np.testing.assert_allclose(a.unwrapped, b.unwrapped, atol=1e-12)

    def test_sample_times(self, ring_grid):
        f = init_field(ring_grid, lambda x: plane_wave(x, 2.0))
        tr = integrate_trajectory(np.array([1.0]), VelocityProvider.from_snapshots([f]), 1.0, 0.01, record_every=10)
        assert len(tr.times) == 11
        assert len(tr.step_errors) == 10
        tr.position_at(0.3)
        with pytest.raises(TimeMismatchError):
            tr.position_at(0.35)

    def test_start_outside_domain(self, ring_grid):
        f = init_field(ring_grid, lambda x: plane_wave(x, 2.0))
        with pytest.raises(ConfigError):
            integrate_trajectory(np.array([-1.0]), VelocityProvider.from_snapshots([f]), 1.0, 0.01)

    def test_non_finite_velocity_keeps_partial_path(self, ring_grid):
        class Blowup:
            grid = ring_grid

            def __call__(self, t, points):
                v = np.ones_like(points)
                return v if t <= 0.5 else v * np.nan

        with pytest.raises(IntegrationError) as exc:
            integrate_ensemble(np.array([[1.0]]), Blowup(), 1.0, 0.1)
        partial = exc.value.partial
        assert partial is not None
        assert partial.times[-1] == pytest.approx(0.5)
        assert partial.unwrapped[-1, 0] == pytest.approx(1.5)

    def test_final_only_keeps_endpoints(self, ring_grid):
        f = init_field(ring_grid, lambda x: plane_wave(x, 2.0))
        provider = VelocityProvider.from_snapshots([f])
        tr = integrate_trajectory(np.array([1.0]), provider, 2.0, 0.01, final_only=True)
        np.testing.assert_allclose(tr.times, [0.0, 2.0])
        assert len(tr.step_errors) == 1
        assert tr.unwrapped[-1, 0] == pytest.approx(5.0, abs=1e-10)

    def test_final_only_matches_full_record(self, two_slit):
        provider = VelocityProvider.from_snapshots([two_slit])
        starts = sample_equilibrium(density(two_slit), 50, seed=3)
        full = integrate_ensemble(starts, provider, 0.3, 0.01)
        ends = integrate_ensemble(starts, provider, 0.3, 0.01, final_only=True)
        np.testing.assert_array_equal([tr.final for tr in ends], [tr.final for tr in full])
        assert all(len(tr.times) == 2 for tr in ends)

    def test_universe_ensemble_moves_along_the_flow(self, universe):
        provider = VelocityProvider.from_snapshots([universe])
        starts = sample_equilibrium(density(universe), 50, seed=13)
        for tr in integrate_ensemble(starts, provider, 1.0, 1e-3, record_every=100):
            np.testing.assert_allclose(tr.unwrapped - tr.start, np.outer(tr.times, [1.0, -1.0]), atol=1e-6)

    def test_halving_dt_traj_on_the_universe(self, universe):
        provider = VelocityProvider.from_snapshots([universe])
        start = np.array([1.0, 0.5])
        coarse = integrate_trajectory(start, provider, 2.0, 1e-2, final_only=True)
        fine = integrate_trajectory(start, provider, 2.0, 5e-3, final_only=True)
        assert np.max(np.abs(coarse.unwrapped[-1] - fine.unwrapped[-1])) < 1e-8

    def test_free_packet_trajectory_stays_at_one_sigma(self):
        grid = make_grid([(-20.0, 20.0, 256)])
        f = init_field(grid, lambda x: gaussian_packet(x, 0.0, 1.0))
        dt = 0.005
        snaps = evolve(f, make_plan(grid, dt), 2.0, [round(dt * k, 10) for k in range(401)])
        tr = integrate_trajectory(np.array([1.0]), VelocityProvider.from_snapshots(snaps), 2.0, dt, record_every=40)
        for t, q in zip(tr.times, tr.unwrapped[:, 0]):
            assert q / packet_width(1.0, t) == pytest.approx(1.0, abs=1e-3)

    def test_speed_cap_counts_clamps(self, ring_grid):
        class Fast:
            grid = ring_grid

            def __call__(self, t, points):
                return np.full_like(points, 1e6)

        [tr] = integrate_ensemble(np.array([[1.0]]), Fast(), 0.1, 0.01)
        assert tr.clamp_events > 0
        v_max = ring_grid.diameter / (10 * 0.01)
        assert tr.unwrapped[-1, 0] - 1.0 == pytest.approx(v_max * 0.1)


class TestRunEnsemble:
    def test_free_gaussian_is_reproducible(self):
        a = run_ensemble("free_gaussian", 64, seed=21)
        b = run_ensemble("free_gaussian", 64, seed=21)
        for ta, tb in zip(a.trajectories, b.trajectories):
            np.testing.assert_array_equal(ta.unwrapped, tb.unwrapped)
        assert a.scenario_id == "free_gaussian"
        assert ordering_violations(a) == 0

    def test_free_gaussian_equivariance(self):
        e = run_ensemble("free_gaussian", 2000, seed=4)
        report = equivariance_report(e, e.snapshots[::10])
        assert report.passed, report.to_dict()
        assert report.max_distance < ks_threshold(2000)

    def test_overrides_and_init(self):
        e = run_ensemble(
            "two_slit", 40, seed=1, overrides={"t_final": 0.5, "snapshot_times": (0.0, 0.5)}
        )
        hits = plane_crossings(e, axis=0, plane=0.0, transverse=1)
        assert np.all(np.abs(hits) >= 0.6) and np.all(np.abs(hits) <= 3.4)
        assert axis_crossings(e) == 0
        eq = run_ensemble("two_slit", 40, seed=1, overrides={"t_final": 0.5}, init=InitRule.EQUILIBRIUM)
        assert not np.allclose(eq.starts()[:, 0], 0.0)

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            run_ensemble("free_gaussian", 10, seed=0, overrides={"nonsense": 1})

    def test_wrong_density_fails_equivariance(self):
        e = run_ensemble("free_gaussian", 2000, seed=4)
        initial, final = e.snapshots[0], e.snapshots[-1]
        stale = initial.with_amplitudes(initial.amplitudes, time_tag=final.time_tag)
        assert equivariance_report(e, [final]).passed
        report = equivariance_report(e, [stale])
        assert not report.passed
        assert report.max_distance > 0.5

    @pytest.mark.slow
    def test_two_slit_equivariance_large(self):
        e = run_ensemble("two_slit", 10_000, seed=2024, init=InitRule.EQUILIBRIUM, workers=4)
        keep = {0.0, 1.0, 2.0, 3.0, 4.0}
        snaps = [s for s in e.snapshots if round(s.time_tag, 9) in keep]
        report = equivariance_report(e, snaps)
        assert len(report.entries) == 5
        assert report.max_distance < ks_threshold(10_000)


class TestPathGeometry:
    def test_plane_crossing_interpolates(self):
        times = np.array([0.0, 1.0, 2.0])
        path = np.array([[-1.0, 0.0], [1.0, 2.0], [3.0, 4.0]])
        e = _ensemble([path], times)
        assert plane_crossings(e, axis=0, plane=0.0)[0] == pytest.approx(1.0)

    def test_plane_never_reached(self):
        times = np.array([0.0, 1.0])
        e = _ensemble([np.array([[1.0, 0.0], [2.0, 0.0]])], times)
        assert np.isnan(plane_crossings(e, axis=0, plane=0.0)[0])

    def test_axis_crossings(self):
        times = np.array([0.0, 1.0, 2.0])
        up = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]])
        across = np.array([[0.0, 1.0], [0.0, 0.0], [0.0, -1.0]])
        assert axis_crossings(_ensemble([up, across], times)) == 1

    def test_ordering_violations(self):
        times = np.array([0.0, 1.0, 2.0])
        a = np.array([[0.0], [1.0], [3.0]])
        b = np.array([[1.0], [2.0], [2.5]])
        assert ordering_violations(_ensemble([a, b], times)) == 1

    def test_one_dimensional_gaussian_paths_never_cross(self, line_grid):
        f = init_field(line_grid, lambda x: gaussian_packet(x, 0.0, 1.0, momentum=0.5))
        snaps = evolve(f, make_plan(line_grid, 0.005), 2.0, [round(0.1 * k, 10) for k in range(21)])
        provider = VelocityProvider.from_snapshots(snaps)
        starts = sample_equilibrium(density(f), 100, seed=8)
        e = TrajectoryEnsemble(integrate_ensemble(starts, provider, 2.0, 0.005, record_every=20), 8, "free")
        assert ordering_violations(e) == 0
