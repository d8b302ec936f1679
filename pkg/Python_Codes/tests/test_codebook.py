import numpy as np
import pytest
import torch

from codebook import (
    Codebook,
    CodebookParams,
    CodewordAssignment,
    apply_assignment,
    binned_assignment,
    codebook_scale,
    expand_codebook,
    gaussian_codebook,
    materialize_codebook,
    materialize_torch,
    orthogonal_codebook,
    power_check,
    pre_params_from_codebook,
)
from mathkit import DTYPE, UsageError


class TestLearnedCodebook:
    def test_power_budget_holds_for_any_pre_parameters(self, rng):
        params = CodebookParams(50.0 * rng.normal(size=(2, 3, 7)), energy=2.0)
        C = materialize_codebook(params)
        assert C.matrix.shape == (3, 7)
        assert power_check(C, 2.0)
        assert np.all(C.column_powers() <= 2.0 + 1e-12)

    def test_saturated_entries_reach_the_budget(self):
        params = CodebookParams(np.full((2, 4, 2), 40.0), energy=1.0)
        np.testing.assert_allclose(materialize_codebook(params).column_powers(), 1.0)

    def test_torch_matches_numpy(self, rng):
        params = CodebookParams.init_uniform(3, 5, 1.5, rng)
        pair = materialize_torch(torch.as_tensor(params.pre, dtype=DTYPE), 1.5)
        np.testing.assert_allclose(pair.to_numpy(), materialize_codebook(params).matrix, rtol=1e-14)

    def test_inverse_map_recovers_interior_codebook(self, rng):
        a = codebook_scale(1.0, 4)
        C = a * (rng.uniform(-0.9, 0.9, size=(4, 3)) + 1j * rng.uniform(-0.9, 0.9, size=(4, 3)))
        back = materialize_codebook(pre_params_from_codebook(C, 1.0))
        np.testing.assert_allclose(back.matrix, C, atol=1e-12)

    def test_inverse_map_clips_boundary_entries(self):
        C = orthogonal_codebook(2, 2, 1.0).matrix
        pre = pre_params_from_codebook(C, 1.0).pre
        assert np.all(np.isfinite(pre))
        assert power_check(materialize_codebook(CodebookParams(pre, 1.0)), 1.0)

    def test_bad_shape(self):
        with pytest.raises(UsageError):
            CodebookParams(np.zeros((3, 2, 2)))

    def test_non_finite(self):
        with pytest.raises(UsageError):
            CodebookParams(np.full((2, 1, 1), np.inf))


class TestFixedCodebooks:
    def test_orthogonal(self):
        C = orthogonal_codebook(3, 5, 2.0)
        np.testing.assert_allclose(C.column_powers(), 2.0)
        gram = C.matrix.conj().T @ C.matrix
        np.testing.assert_allclose(gram, 2.0 * np.eye(3))

    def test_orthogonal_needs_enough_dimensions(self):
        with pytest.raises(UsageError):
            orthogonal_codebook(4, 2, 1.0)

    def test_gaussian_respects_budget(self, rng):
        C = gaussian_codebook(20, 5, 1.0, rng)
        assert C.matrix.shape == (5, 20)
        assert power_check(C, 1.0)

    def test_gaussian_is_seeded(self):
        a = gaussian_codebook(6, 3, 1.0, np.random.default_rng(2))
        b = gaussian_codebook(6, 3, 1.0, np.random.default_rng(2))
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_power_check_tolerance(self):
        assert power_check(np.array([[1.0 + 2e-10]]), 1.0)
        assert not power_check(np.array([[1.001]]), 1.0)

    def test_codebook_is_frozen(self):
        C = Codebook(np.eye(2))
        with pytest.raises(ValueError):
            C.matrix[0, 0] = 2.0


class TestAssignment:
    def test_binning(self):
        np.testing.assert_array_equal(binned_assignment(6, 3), [0, 0, 1, 1, 2, 2])
        np.testing.assert_array_equal(binned_assignment(5, 2), [0, 0, 0, 1, 1])
        np.testing.assert_array_equal(binned_assignment(4, 4), [0, 1, 2, 3])

    @pytest.mark.parametrize("m_prime", [0, 5])
    def test_binning_range(self, m_prime):
        with pytest.raises(UsageError):
            binned_assignment(4, m_prime)

    def test_identity(self):
        a = CodewordAssignment.identity(orthogonal_codebook(3, 3, 1.0))
        assert (a.M, a.M_prime) == (3, 3)
        np.testing.assert_array_equal(expand_codebook(a), np.eye(3))

    def test_expand_repeats_shared_codewords(self):
        C = Codebook(np.array([[1.0, 2.0]]))
        a = CodewordAssignment(binned_assignment(4, 2), C)
        np.testing.assert_array_equal(expand_codebook(a), [[1.0, 1.0, 2.0, 2.0]])

    def test_apply(self):
        C = Codebook(np.array([[1.0, 2.0], [3.0, 4.0]]))
        a = CodewordAssignment([1, 0, 1], C)
        j, c = apply_assignment(a, 2)
        assert j == 1
        np.testing.assert_array_equal(c, [2.0, 4.0])
        with pytest.raises(UsageError):
            apply_assignment(a, 3)

    def test_mapping_out_of_range(self):
        with pytest.raises(UsageError):
            CodewordAssignment([0, 2], Codebook(np.eye(2)))

    def test_more_codewords_than_observations(self):
        with pytest.raises(UsageError):
            CodewordAssignment([0], Codebook(np.eye(2)))
