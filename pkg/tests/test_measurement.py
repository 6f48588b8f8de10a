"""Measurement pipeline: composite evolution, result bins, bilinearity and POVM recovery."""

from __future__ import annotations

import math

import numpy as np
import pytest

from bohmlab.core.measurement import (
    ExperimentSpec,
    ResultDistribution,
    compose,
    extract_povm,
    pointer_coupling,
    pointer_experiment,
    pointer_system_states,
    position_projectors,
    run_experiment,
    sample_result_distribution,
    sign_bins,
    verify_bilinearity,
    verify_spectral_measure,
)
from bohmlab.core.wavefield import density, gaussian_packet, init_field, make_grid, marginal, norm
from bohmlab.protocol import ConfigError, ResultMethod


@pytest.fixture(scope="module")
def spec() -> ExperimentSpec:
    return pointer_experiment()


@pytest.fixture(scope="module")
def branches(spec):
    return pointer_system_states(spec.system_grid)


@pytest.fixture(scope="module")
def superposition(branches):
    left, right = branches
    psi = 0.6 * left + 0.8 * right
    return psi / norm(psi)


class TestExperimentSpec:
    def test_composite_grid(self, spec):
        assert spec.composite_grid.shape == (128, 256)
        assert spec.labels.shape == (128 * 256,)
        assert set(np.unique(spec.labels)) == {0, 1}

    def test_field_times_include_coupling_end(self, spec):
        times = spec.field_times()
        assert times[0] == 0.0
        assert 0.005 in times
        assert times[-1] == pytest.approx(2.0)

    def test_ready_state_must_be_normalized(self, spec):
        with pytest.raises(ConfigError):
            ExperimentSpec(
                spec.system_grid, spec.ready_state * 2.0, spec.coupling, 1.0, ("-", "+"), sign_bins, 0.005
            )

    def test_duration_must_be_positive(self, spec):
        with pytest.raises(ConfigError):
            ExperimentSpec(spec.system_grid, spec.ready_state, spec.coupling, 0.0, ("-", "+"), sign_bins, 0.005)

    def test_result_function_must_cover_bins(self, spec):
        with pytest.raises(ConfigError):
            ExperimentSpec(
                spec.system_grid, spec.ready_state, spec.coupling, 1.0, ("only",), sign_bins, 0.005
            )

    def test_sign_bins(self):
        pts = np.array([[3.0, -0.1], [-3.0, 0.0], [0.0, 2.0]])
        np.testing.assert_array_equal(sign_bins(pts), [0, 1, 1])

    def test_coupling_is_one_frame(self, spec):
        v = pointer_coupling(spec.composite_grid, 5.0, 0.005)
        assert len(v.frames) == 1
        assert v.frames[0].stop == 0.005


class TestCompose:
    def test_product(self, branches, spec):
        left, _ = branches
        c = compose(left, spec.ready_state)
        assert c.grid.shape == (128, 256)
        assert norm(c) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_unnormalized(self, branches, spec):
        left, _ = branches
        with pytest.raises(ConfigError, match="normalized"):
            compose(left * 2.0, spec.ready_state)

    def test_memory_budget(self, branches, spec):
        left, _ = branches
        with pytest.raises(ConfigError, match="memory budget"):
            compose(left, spec.ready_state, memory_budget=1024)

    def test_system_marginal(self, branches, spec):
        left, _ = branches
        c = compose(left, spec.ready_state)
        np.testing.assert_allclose(marginal(density(c), 0).values, density(left).values, rtol=0, atol=1e-12)

    def test_linear_in_the_system_state(self, branches, spec):
        left, right = branches
        raw = 0.6 * left + 0.8j * right
        c = compose(raw / norm(raw), spec.ready_state)
        expected = (0.6 * compose(left, spec.ready_state) + 0.8j * compose(right, spec.ready_state)) / norm(raw)
        np.testing.assert_allclose(c.amplitudes, expected.amplitudes, rtol=0, atol=1e-14)


class TestPointerMeasurement:
    def test_bins_match_squared_amplitudes(self, spec, superposition):
        result = run_experiment(spec, superposition)
        assert result.method is ResultMethod.PUSHFORWARD
        assert result.mass("-") == pytest.approx(0.36, abs=2e-3)
        assert result.mass("+") == pytest.approx(0.64, abs=2e-3)
        assert result.total == pytest.approx(1.0, abs=1e-10)

    def test_spectral_measure(self, spec, superposition):
        comparison = verify_spectral_measure(spec, position_projectors(spec.system_grid), superposition)
        assert comparison.projector == pytest.approx((0.36, 0.64), abs=1e-9)
        assert comparison.max_difference < 2e-3

    def test_incomplete_projectors(self, spec, superposition):
        masks = position_projectors(spec.system_grid)
        with pytest.raises(ConfigError, match="incomplete"):
            verify_spectral_measure(spec, [masks[0], masks[0]], superposition)

    def test_projector_count_must_match_bins(self, spec, superposition):
        with pytest.raises(ConfigError):
            verify_spectral_measure(spec, position_projectors(spec.system_grid)[:1], superposition)

    def test_rejects_unnormalized_system_state(self, spec, superposition):
        with pytest.raises(ConfigError):
            run_experiment(spec, superposition * 1.1)

    def test_bilinearity(self, spec, branches):
        left, right = branches
        r = 1.0 / math.sqrt(2.0)
        assert verify_bilinearity(spec, left, right, r, 1j * r) < 1e-8

    def test_bilinearity_needs_unit_coefficients(self, spec, branches):
        left, right = branches
        with pytest.raises(ConfigError):
            verify_bilinearity(spec, left, right, 1.0, 1.0)

    def test_bilinearity_needs_orthonormal_states(self, spec, branches):
        left, _ = branches
        with pytest.raises(ConfigError, match="orthonormal"):
            verify_bilinearity(spec, left, left, 0.6, 0.8)

    def test_povm(self, spec, branches):
        povm = extract_povm(spec, list(branches))
        assert povm.min_eigenvalue > -1e-8
        assert povm.completeness_error < 1e-8
        np.testing.assert_allclose(povm.elements["-"], [[1.0, 0.0], [0.0, 0.0]], atol=1e-5)
        np.testing.assert_allclose(povm.elements["+"], [[0.0, 0.0], [0.0, 1.0]], atol=1e-5)
        assert set(povm.to_dict()["elements"]) == {"-", "+"}

    def test_global_phase_does_not_change_bins(self, spec, superposition):
        plain = run_experiment(spec, superposition)
        turned = run_experiment(spec, superposition * np.exp(0.73j))
        np.testing.assert_allclose(turned.masses, plain.masses, rtol=0, atol=1e-12)

    def test_single_branch_is_read_off(self, spec, branches):
        _, right = branches
        result = run_experiment(spec, right)
        assert result.mass("-") < 1e-4
        assert result.mass("+") > 1.0 - 1e-4

    def test_sampled_agrees_with_pushforward(self, spec, superposition):
        pushed = run_experiment(spec, superposition)
        sampled = sample_result_distribution(spec, superposition, 2000, seed=17)
        assert sampled.method is ResultMethod.SAMPLED
        assert sampled.sample_count == 2000
        assert sampled.total == pytest.approx(1.0)
        assert all(g.passed for g in sampled.agrees_with(pushed))


class TestResultDistribution:
    def test_agreement_gates(self):
        ref = ResultDistribution(("a", "b"), (0.5, 0.5))
        close = ResultDistribution(("a", "b"), (0.51, 0.49), ResultMethod.SAMPLED, sample_count=1000)
        far = ResultDistribution(("a", "b"), (0.7, 0.3), ResultMethod.SAMPLED, sample_count=1000)
        assert [g.name for g in close.agrees_with(ref)] == ["sampled_bin[a]", "sampled_bin[b]"]
        assert all(g.passed for g in close.agrees_with(ref))
        assert not any(g.passed for g in far.agrees_with(ref))

    def test_agreement_needs_samples(self):
        ref = ResultDistribution(("a",), (1.0,))
        with pytest.raises(ConfigError):
            ref.agrees_with(ref)

    def test_to_dict(self):
        d = ResultDistribution(("-", "+"), (0.25, 0.75)).to_dict()
        assert d == {"method": "density-pushforward", "bins": {"-": 0.25, "+": 0.75}, "sample_count": 0}


class TestSmallExperiment:
    def test_without_kick_pointer_stays_centred(self):
        # without a kick the pointer stays centred and reads "+" about half the time
        system = make_grid([(-8.0, 8.0, 64)])
        pointer = make_grid([(-8.0, 8.0, 64)])
        ready = init_field(pointer, lambda y: gaussian_packet(y, 0.0, 1.0))
        coupling = pointer_coupling(system.product(pointer), 0.0, 0.01)
        spec = ExperimentSpec(system, ready, coupling, 0.5, ("-", "+"), sign_bins, 0.01)
        psi = init_field(system, lambda x: gaussian_packet(x, 0.0, 1.0))
        result = run_experiment(spec, psi)
        assert result.total == pytest.approx(1.0, abs=1e-10)
        assert result.mass("+") == pytest.approx(0.5, abs=0.06)
