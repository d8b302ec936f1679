import numpy as np
import pytest

from mathkit import UnsupportedModelError, UsageError
from system_model import (
    BINARY_PEAKED_PROBS,
    BINARY_SUPPORT,
    MIXED_SUPPORT,
    ChannelKind,
    ChannelModel,
    ObservationModel,
    Scenario,
    TargetPrior,
    effective_channel,
    obs_pmf,
    rx_conditional_moments,
    sample_batch,
    sample_channel,
    sample_observations,
    sample_target,
    synthesize_rx,
    type_vector,
)


class TestTargetPrior:
    def test_uniform(self):
        prior = TargetPrior.uniform(BINARY_SUPPORT)
        assert prior.size == 9
        assert prior.probabilities().sum() == pytest.approx(1.0)

    def test_peaked_prior_is_valid(self):
        prior = TargetPrior(BINARY_SUPPORT, BINARY_PEAKED_PROBS)
        assert prior.index_of(0.5) == 4

    @pytest.mark.parametrize(
        "support, probs",
        [
            ((), ()),
            ((0.1, 0.2), (1.0,)),
            ((0.1, 0.1), (0.5, 0.5)),
            ((0.1, 0.2), (1.2, -0.2)),
            ((0.1, 0.2), (0.5, 0.6)),
        ],
    )
    def test_invalid(self, support, probs):
        with pytest.raises(UsageError):
            TargetPrior(support, probs)

    def test_unknown_value(self):
        with pytest.raises(UsageError):
            TargetPrior.uniform(MIXED_SUPPORT).index_of(0.3)

    def test_point_mass(self, rng):
        prior = TargetPrior((0.2, 0.4, 0.6), (0.0, 1.0, 0.0))
        assert {sample_target(prior, rng) for _ in range(50)} == {0.4}


class TestObservationModel:
    def test_bernoulli_rows(self):
        model = ObservationModel.bernoulli(BINARY_SUPPORT)
        assert model.M == 2
        np.testing.assert_allclose(obs_pmf(model, 0.3), [0.7, 0.3])

    def test_mixed_model_rows_sum_to_one(self):
        model = ObservationModel.even_uniform_odd_binomial(MIXED_SUPPORT, 20)
        assert model.M == 20
        np.testing.assert_allclose(model.table.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(model.table[:, 0::2], 1 / 20)

    def test_mixed_model_odd_entries(self):
        model = ObservationModel.even_uniform_odd_binomial((0.5,), 4)
        # odd w = 1, 3 carry Binom(i; 1, 0.5) / 2
        np.testing.assert_allclose(model.table[0], [0.25, 0.25, 0.25, 0.25])

    def test_odd_M_rejected(self):
        with pytest.raises(UsageError):
            ObservationModel.even_uniform_odd_binomial(MIXED_SUPPORT, 5)

    def test_row_sum_checked(self):
        with pytest.raises(UsageError):
            ObservationModel.tabular((0.1, 0.2), [[0.5, 0.4], [0.5, 0.5]])

    def test_table_is_read_only(self):
        model = ObservationModel.bernoulli((0.5,))
        with pytest.raises(ValueError):
            model.table[0, 0] = 1.0

    def test_sample_observations_frequencies(self):
        model = ObservationModel.bernoulli(BINARY_SUPPORT)
        w = sample_observations(model, 0.7, 200_000, np.random.default_rng(5))
        assert w.mean() == pytest.approx(0.7, abs=0.005)

    def test_sample_observations_needs_sensors(self, rng):
        with pytest.raises(UsageError):
            sample_observations(ObservationModel.bernoulli((0.5,)), 0.5, 0, rng)

    def test_deterministic_observations(self, rng):
        model = ObservationModel.tabular((0.0, 1.0), [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(sample_observations(model, 1.0, 6, rng), [2] * 6)


class TestTypeVector:
    def test_counts(self):
        np.testing.assert_array_equal(type_vector([0, 2, 2, 3], 4), [1, 0, 2, 1])

    def test_sums_to_K(self, rng):
        w = rng.integers(0, 5, size=(10, 7))
        t = type_vector(w, 5)
        assert t.shape == (10, 5)
        np.testing.assert_array_equal(t.sum(axis=1), 7)

    @pytest.mark.parametrize("w", [[0, 4], [-1, 0], [0.5, 1.0]])
    def test_out_of_range(self, w):
        with pytest.raises(UsageError):
            type_vector(np.asarray(w), 4)


class TestBatch:
    def test_shapes_and_consistency(self, mixed_scenario, rng):
        sc = mixed_scenario
        batch = sample_batch(sc.prior, sc.obs_model, sc.K, 32, rng)
        assert batch.size == 32
        assert batch.w.shape == (32, sc.K)
        np.testing.assert_array_equal(batch.t.sum(axis=1), sc.K)
        np.testing.assert_array_equal(batch.s, np.asarray(sc.support)[batch.s_index])

    def test_supports_must_agree(self, rng):
        prior = TargetPrior.uniform((0.1, 0.2))
        model = ObservationModel.bernoulli((0.1, 0.3))
        with pytest.raises(UsageError):
            sample_batch(prior, model, 3, 4, rng)


class TestChannel:
    def test_snr_conversion(self):
        ch = ChannelModel.from_snr_db("unit_gain", 10.0, energy=1.0)
        assert ch.kind is ChannelKind.UNIT_GAIN
        assert ch.noise_var == pytest.approx(0.1)
        assert ChannelModel.from_snr_db("rician", 0.0).noise_var == pytest.approx(1.0)

    def test_invalid_noise(self):
        with pytest.raises(UsageError):
            ChannelModel.unit_gain(0.0)

    def test_unit_gain_draws_are_ones(self, rng):
        np.testing.assert_array_equal(sample_channel(ChannelModel.unit_gain(1.0), 5, rng), np.ones(5))

    def test_rician_moments(self):
        ch = ChannelModel.rician(1.0, scatter_var=0.5, mean=1.0 + 1.0j)
        h = sample_channel(ch, (200_000,), np.random.default_rng(9))
        assert np.mean(h) == pytest.approx(1.0 + 1.0j, abs=0.01)
        assert np.var(h) == pytest.approx(0.5, abs=0.01)

    def test_effective_channel_sums_gains(self):
        w = np.array([0, 2, 2, 1])
        h = np.array([1.0, 2.0 + 1j, -1.0, 0.5j])
        np.testing.assert_allclose(effective_channel(w, h, 4), [1.0, 0.5j, 1.0 + 1j, 0.0])

    def test_effective_channel_unit_gain_is_type_vector(self, rng):
        w = rng.integers(0, 6, size=(4, 9))
        np.testing.assert_array_equal(effective_channel(w, np.ones((4, 9)), 6), type_vector(w, 6))

    def test_effective_channel_shape_mismatch(self):
        with pytest.raises(UsageError):
            effective_channel([0, 1], [1.0], 2)

    def test_noiseless_reception(self, rng):
        C = np.array([[1.0, 1j], [0.0, 2.0]])
        y = synthesize_rx(C, np.array([2.0, 1.0]), 0.0, rng)
        np.testing.assert_allclose(y, [2.0 + 1j, 2.0])

    def test_codebook_width_checked(self, rng):
        with pytest.raises(UsageError):
            synthesize_rx(np.eye(2), np.ones(3), 1.0, rng)

    def test_unit_gain_moments(self):
        C = np.array([[1.0, 0.0], [0.0, 1.0j]])
        mean, cov = rx_conditional_moments(C, [3.0, 1.0], ChannelModel.unit_gain(0.25))
        np.testing.assert_allclose(mean, [3.0, 1.0j])
        np.testing.assert_allclose(cov, 0.25 * np.eye(2))

    def test_rician_moments_closed_form(self):
        C = np.array([[1.0, 1.0], [0.0, 1.0j]])
        t = np.array([2.0, 1.0])
        ch = ChannelModel.rician(0.5, scatter_var=2.0, mean=0.5)
        mean, cov = rx_conditional_moments(C, t, ch)
        np.testing.assert_allclose(mean, 0.5 * C @ t)
        np.testing.assert_allclose(cov, 2.0 * C @ np.diag(t) @ C.conj().T + 0.5 * np.eye(2))

    def test_rician_moments_match_simulation(self):
        rng = np.random.default_rng(11)
        C = np.array([[1.0, 0.5j], [0.3, -1.0]])
        ch = ChannelModel.rician(0.2, scatter_var=0.7, mean=1.0)
        w = np.array([0, 0, 1])
        h = sample_channel(ch, (100_000, 3), rng)
        y = synthesize_rx(C, effective_channel(np.broadcast_to(w, h.shape), h, 2), ch.noise_std, rng)
        mean, cov = rx_conditional_moments(C, type_vector(w, 2), ch)
        np.testing.assert_allclose(y.mean(axis=0), mean, atol=0.02)
        centered = y - y.mean(axis=0)
        np.testing.assert_allclose(centered.T @ centered.conj() / len(y), cov, atol=0.03)

    def test_sensor_specific_means_unsupported(self):
        ch = ChannelModel.rician(1.0, mean=(1.0, 2.0))
        with pytest.raises(UnsupportedModelError):
            rx_conditional_moments(np.eye(2), [1.0, 1.0], ch)


class TestScenario:
    def test_fields(self, mixed_scenario):
        assert mixed_scenario.M == 20
        assert mixed_scenario.support == MIXED_SUPPORT

    def test_invalid(self, binary_scenario):
        with pytest.raises(UsageError):
            Scenario(binary_scenario.prior, binary_scenario.obs_model, binary_scenario.channel, 0, 2)
