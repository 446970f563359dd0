import math

import numpy as np
import pytest

from preclt.core.exceptions import DimensionError, NotPositiveDefiniteError
from preclt.services.precision import (
    PopulationCovariance,
    all_paths,
    log_det_and_lss,
    lss_difference,
    max_relative_spread,
    pair_projectors,
    precision_diag_cramer,
    precision_diag_direct,
    precision_diag_product_chain,
    precision_diag_quadform,
    precision_matrix_direct,
    precision_pair_quadform,
    quadform_entry,
    sample_covariance,
)
from preclt.services.randgen import DataMatrix, SeedSpec, make_distribution, sample_data_matrix


class TestPopulationCovariance:
    """Test the population covariance menu"""

    def test_identity(self):
        sigma = PopulationCovariance.identity(4)
        assert sigma.is_identity
        assert np.array_equal(sigma.inverse_diag, np.ones(4))

    def test_diagonal(self):
        sigma = PopulationCovariance.diagonal([1.0, 4.0])
        assert not sigma.is_identity
        assert np.allclose(sigma.sqrt, np.diag([1.0, 2.0]))
        assert np.allclose(sigma.inverse_diag, [1.0, 0.25])

    def test_diagonal_rejects_non_positive(self):
        with pytest.raises(NotPositiveDefiniteError):
            PopulationCovariance.diagonal([1.0, 0.0])

    def test_ar1_square_root_and_inverse(self):
        sigma = PopulationCovariance.ar1(6, 0.5)
        assert sigma.matrix[0, 2] == pytest.approx(0.25)
        assert np.allclose(sigma.sqrt @ sigma.sqrt, sigma.matrix, atol=1e-12)
        assert np.allclose(sigma.inverse @ sigma.matrix, np.eye(6), atol=1e-12)

    def test_ar1_parameter_range(self):
        with pytest.raises(NotPositiveDefiniteError):
            PopulationCovariance.ar1(3, 1.0)

    def test_general_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefiniteError):
            PopulationCovariance.general(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_transform_dimension_mismatch(self, small_matrix):
        with pytest.raises(DimensionError):
            PopulationCovariance.identity(5).transform(small_matrix)


class TestSampleCovariance:
    """Test Sigma-hat construction"""

    def test_identity_sigma(self, small_matrix):
        s = sample_covariance(small_matrix)
        x = small_matrix.entries
        assert np.allclose(s.matrix, x @ x.T / 20)
        assert np.array_equal(s.matrix, s.matrix.T)
        assert len(s.source_hash) == 16

    def test_general_sigma(self, small_matrix):
        sigma = PopulationCovariance.ar1(6, 0.3)
        s = sample_covariance(small_matrix, sigma)
        x = small_matrix.entries
        assert np.allclose(s.matrix, sigma.sqrt @ x @ x.T @ sigma.sqrt / 20, atol=1e-12)


class TestPrecisionPaths:
    """Test agreement of every precision path"""

    @pytest.mark.parametrize("q", [1, 3, 5, 6])
    def test_paths_agree(self, small_matrix, q):
        paths = all_paths(small_matrix, q)
        assert max_relative_spread(list(paths.values())) < 1e-8

    @pytest.mark.parametrize("kind", ["uniform", "student_t", "shifted_exponential"])
    def test_paths_agree_non_gaussian(self, kind):
        x = sample_data_matrix(make_distribution(kind), 30, 90, SeedSpec(5, 1))
        for q in (1, 15, 29, 30):
            assert max_relative_spread(list(all_paths(x, q).values())) < 1e-8

    def test_pair_paths_present_for_trailing_indices(self, small_matrix):
        assert "pair" in all_paths(small_matrix, 6)
        assert "pair" in all_paths(small_matrix, 5)
        assert "pair" not in all_paths(small_matrix, 2)

    def test_direct_matches_full_inverse(self, medium_matrix):
        s = sample_covariance(medium_matrix)
        assert np.allclose(precision_diag_direct(s), np.diag(precision_matrix_direct(s)), rtol=1e-10)
        assert np.allclose(precision_diag_direct(s), np.diag(np.linalg.inv(s.matrix)), rtol=1e-8)

    def test_cgs2_matches_mgs(self, medium_matrix):
        a = precision_diag_quadform(medium_matrix, 12, "mgs")
        b = precision_diag_quadform(medium_matrix, 12, "cgs2")
        assert a == pytest.approx(b, rel=1e-10)

    def test_quadform_result(self, small_matrix):
        result = quadform_entry(small_matrix, 6)
        assert result.entry == pytest.approx(20 / result.form)
        assert result.projector.rank == 20 - 5

    def test_quadform_with_diagonal_sigma(self, small_matrix):
        sigma = PopulationCovariance.diagonal(np.linspace(0.5, 2.0, 6))
        y = sigma.transform(small_matrix)
        s = sample_covariance(small_matrix, sigma)
        for q in (1, 4, 6):
            assert precision_diag_quadform(y, q) == pytest.approx(precision_diag_direct(s)[q - 1], rel=1e-8)
            assert precision_diag_cramer(s, q) == pytest.approx(precision_diag_direct(s)[q - 1], rel=1e-8)

    def test_index_out_of_range(self, small_matrix):
        with pytest.raises(DimensionError):
            precision_diag_quadform(small_matrix, 0)
        with pytest.raises(DimensionError):
            precision_diag_cramer(sample_covariance(small_matrix), 7)
        with pytest.raises(DimensionError):
            precision_diag_product_chain(small_matrix, 7)

    def test_single_row(self, gaussian):
        x = sample_data_matrix(gaussian, 1, 10, SeedSpec(1))
        expected = 10.0 / float(x.row(1) @ x.row(1))
        assert precision_diag_quadform(x, 1) == pytest.approx(expected)
        assert precision_diag_product_chain(x, 1) == pytest.approx(expected)

    @pytest.mark.parametrize("i,j", [(1, 6), (2, 5), (3, 4)])
    def test_row_permutation_permutes_the_diagonal(self, small_matrix, i, j):
        swapped = small_matrix.with_rows_swapped(i, j)
        order = list(range(1, 7))
        order[i - 1], order[j - 1] = j, i
        direct = precision_diag_direct(sample_covariance(small_matrix))
        for q in range(1, 7):
            expected = direct[order[q - 1] - 1]
            for value in all_paths(swapped, q).values():
                assert value == pytest.approx(expected, rel=1e-8)

    def test_scalar_case(self):
        a, b = 1.5, -0.5
        x = DataMatrix(np.array([[a, b]]))
        s = sample_covariance(x)
        assert s.matrix[0, 0] == pytest.approx((a * a + b * b) / 2)
        assert precision_diag_quadform(x, 1) == pytest.approx(2 / (a * a + b * b))
        assert precision_diag_direct(s)[0] == pytest.approx(2 / (a * a + b * b))

    def test_max_relative_spread(self):
        assert max_relative_spread([]) == 0.0
        assert max_relative_spread([2.0, 2.0]) == 0.0
        assert max_relative_spread([1.0, 2.0]) == pytest.approx(0.5)


class TestPairEntries:
    """Test the shared-projector pair representation"""

    def test_pair_matches_direct(self, medium_matrix):
        pair = precision_pair_quadform(medium_matrix)
        direct = precision_diag_direct(sample_covariance(medium_matrix))
        assert pair.last == pytest.approx(direct[24], rel=1e-8)
        assert pair.second_last == pytest.approx(direct[23], rel=1e-8)

    def test_pair_projectors(self, medium_matrix):
        projectors = pair_projectors(medium_matrix)
        assert projectors.p_pm2.rank == 80 - 23
        assert projectors.p_pm1.rank == 80 - 24
        assert projectors.q_p.rank == 1
        assert projectors.difference.rank == 80 - 24
        b = medium_matrix.row(24)
        form = float(projectors.difference.apply(b) @ projectors.difference.apply(b))
        assert 80 / form == pytest.approx(precision_pair_quadform(medium_matrix).second_last, rel=1e-8)

    def test_pair_needs_two_rows(self, gaussian):
        x = sample_data_matrix(gaussian, 1, 10, SeedSpec(1))
        with pytest.raises(DimensionError):
            precision_pair_quadform(x)
        with pytest.raises(DimensionError):
            pair_projectors(x)


class TestLogDeterminants:
    """Test the log-determinant difference identity"""

    def test_lss_is_log_precision(self, medium_matrix):
        s = sample_covariance(medium_matrix)
        direct = precision_diag_direct(s)
        for q in (1, 13, 25):
            assert lss_difference(s, q) == pytest.approx(math.log(direct[q - 1]), abs=1e-8)

    def test_log_det_and_lss(self, medium_matrix):
        s = sample_covariance(medium_matrix)
        values = log_det_and_lss(s, 25)
        assert values["log_det"] == pytest.approx(np.linalg.slogdet(s.matrix)[1], abs=1e-9)
        assert values["lss"] == pytest.approx(lss_difference(s, 25, verify=False))
