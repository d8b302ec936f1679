import numpy as np
import pytest
import torch

from decoder import (
    DecoderParams,
    binary_mixture_posterior,
    decoder_forward,
    decoder_logits,
    exact_map_oracle,
    flatten_rx,
    hard_estimate,
    ml_decode_binary,
    ml_decode_binary_batch,
)
from mathkit import DTYPE, NumericError, UnsupportedModelError, UsageError
from system_model import (
    BINARY_PEAKED_PROBS,
    BINARY_SUPPORT,
    ChannelModel,
    ObservationModel,
    Scenario,
    TargetPrior,
)
from conftest import small_scenario


class TestPerceptron:
    def test_zero_weights_give_uniform_output(self):
        q = decoder_forward(DecoderParams.zeros(2, 9), np.array([1.0 + 2j, -0.5j]))
        np.testing.assert_allclose(q, np.full(9, 1 / 9))

    def test_rows_are_distributions(self, rng):
        theta = DecoderParams.init_he(3, 4, rng)
        Y = rng.normal(size=(10, 3)) + 1j * rng.normal(size=(10, 3))
        q = decoder_forward(theta, Y)
        assert q.shape == (10, 4)
        np.testing.assert_allclose(q.sum(axis=1), 1.0)
        assert np.all(q > 0)

    def test_batch_matches_single(self, rng):
        theta = DecoderParams.init_he(2, 3, rng)
        Y = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        np.testing.assert_allclose(decoder_forward(theta, Y)[2], decoder_forward(theta, Y[2]))

    def test_input_layout(self):
        np.testing.assert_array_equal(flatten_rx([1 + 2j, 3 - 4j]), [1, 3, 2, -4])

    def test_width_mismatch(self, rng):
        with pytest.raises(UsageError):
            decoder_forward(DecoderParams.init_he(2, 3, rng), np.zeros(3, dtype=complex))

    def test_non_finite_input(self, rng):
        with pytest.raises(NumericError):
            decoder_forward(DecoderParams.init_he(1, 3, rng), np.array([np.nan + 0j]))

    def test_inconsistent_shapes(self):
        with pytest.raises(UsageError):
            DecoderParams(np.zeros((4, 2)), np.zeros(3), np.zeros((2, 4)), np.zeros(2))

    def test_he_initialization(self, rng):
        theta = DecoderParams.init_he(50, 9, rng, hidden=400)
        assert theta.hidden == 400
        np.testing.assert_array_equal(theta.b1, 0.0)
        assert np.var(theta.w1) == pytest.approx(2.0 / 100, rel=0.05)

    def test_dict_round_trip_keeps_arrays(self, rng):
        theta = DecoderParams.init_he(2, 3, rng)
        back = DecoderParams.from_dict(theta.as_dict())
        np.testing.assert_array_equal(back.w2, theta.w2)

    def test_logits_gradcheck(self):
        g = torch.Generator().manual_seed(0)
        params = {
            "decoder.w1": torch.randn(5, 4, dtype=DTYPE, generator=g, requires_grad=True),
            "decoder.b1": torch.randn(5, dtype=DTYPE, generator=g, requires_grad=True),
            "decoder.w2": torch.randn(3, 5, dtype=DTYPE, generator=g, requires_grad=True),
            "decoder.b2": torch.randn(3, dtype=DTYPE, generator=g, requires_grad=True),
        }
        x = torch.randn(6, 4, dtype=DTYPE, generator=g)
        names = list(params)

        def fn(*tensors):
            return torch.log_softmax(decoder_logits(dict(zip(names, tensors)), x), dim=-1)

        assert torch.autograd.gradcheck(fn, tuple(params[n] for n in names))


class TestHardEstimate:
    def test_argmax(self):
        assert hard_estimate([0.1, 0.7, 0.2], (0.2, 0.4, 0.6)) == 0.4

    def test_ties_go_to_smallest_value(self):
        assert hard_estimate([0.5, 0.5, 0.0], (0.3, 0.1, 0.2)) == 0.1
        assert hard_estimate([0.25] * 4, (0.8, 0.6, 0.4, 0.2)) == 0.2

    def test_batch(self):
        q = np.array([[0.9, 0.1], [0.1, 0.9]])
        np.testing.assert_array_equal(hard_estimate(q, (1.0, 2.0)), [1.0, 2.0])


@pytest.fixture
def peaked_scenario():
    prior = TargetPrior(BINARY_SUPPORT, BINARY_PEAKED_PROBS)
    return Scenario(prior, ObservationModel.bernoulli(BINARY_SUPPORT), ChannelModel.unit_gain(0.5), K=3, N=2)


class TestBinaryMixture:
    def test_matches_enumeration(self, peaked_scenario, rng):
        sc = peaked_scenario
        C = np.array([[1.0, 0.3j], [0.2, -0.8 + 0.1j]])
        for _ in range(5):
            y = rng.normal(size=2) + 1j * rng.normal(size=2)
            oracle = exact_map_oracle(y, C, sc.K, sc.prior, sc.obs_model, sc.channel)
            fast = binary_mixture_posterior(y, C, sc.K, sc.prior, sc.obs_model, sc.channel, use_prior=True)[0]
            np.testing.assert_allclose(fast, oracle, rtol=1e-9, atol=1e-12)

    def test_ml_ignores_the_prior(self, peaked_scenario, rng):
        sc = peaked_scenario
        C = np.eye(2)
        uniform = TargetPrior.uniform(BINARY_SUPPORT)
        y = rng.normal(size=2) + 1j * rng.normal(size=2)
        a = binary_mixture_posterior(y, C, sc.K, sc.prior, sc.obs_model, sc.channel)
        b = exact_map_oracle(y, C, sc.K, uniform, sc.obs_model, sc.channel)
        np.testing.assert_allclose(a[0], b, rtol=1e-9, atol=1e-12)

    def test_noiseless_count_is_decoded(self):
        # all K sensors report 1 on orthogonal codewords: y = (0, K)
        sc_obs = ObservationModel.bernoulli(BINARY_SUPPORT)
        prior = TargetPrior.uniform(BINARY_SUPPORT)
        channel = ChannelModel.unit_gain(1e-3)
        y = np.array([0.0, 8.0])
        assert ml_decode_binary(y, np.eye(2), 8, prior, sc_obs, channel) == pytest.approx(0.9)

    def test_batch_matches_single(self, peaked_scenario, rng):
        sc = peaked_scenario
        Y = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        batch = ml_decode_binary_batch(Y, np.eye(2), sc.K, sc.prior, sc.obs_model, sc.channel, use_prior=True)
        single = [ml_decode_binary(y, np.eye(2), sc.K, sc.prior, sc.obs_model, sc.channel, use_prior=True) for y in Y]
        np.testing.assert_array_equal(batch, single)

    def test_rejects_non_binary_observations(self, mixed_scenario):
        sc = mixed_scenario
        with pytest.raises(UnsupportedModelError):
            ml_decode_binary(np.zeros(5), np.zeros((5, 20)), sc.K, sc.prior, sc.obs_model, sc.channel)

    def test_rejects_fading(self, binary_scenario):
        sc = binary_scenario
        with pytest.raises(UnsupportedModelError):
            ml_decode_binary(np.zeros(2), np.eye(2), sc.K, sc.prior, sc.obs_model, ChannelModel.rician(1.0))


class TestOracle:
    def test_posterior_is_a_distribution(self, rng):
        sc = small_scenario(K=3)
        C = np.array([[1.0, 0.0, 0.5j], [0.0, 1.0, 0.5]])
        post = exact_map_oracle(rng.normal(size=2) + 0j, C, sc.K, sc.prior, sc.obs_model, sc.channel)
        assert post.shape == (3,)
        assert post.sum() == pytest.approx(1.0)
        assert np.all(post >= 0)

    def test_size_limit(self, mixed_scenario):
        sc = mixed_scenario
        with pytest.raises(UsageError):
            exact_map_oracle(np.zeros(5), np.zeros((5, 20)), 5, sc.prior, sc.obs_model, sc.channel)
