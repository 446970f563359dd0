import math

import numpy as np
import pytest

from preclt.core.exceptions import DimensionError, DistributionError
from preclt.services.randgen import (
    DataMatrix,
    DistributionKind,
    SeedSpec,
    derive_seed,
    draw_standardized,
    make_distribution,
    sample_data_matrix,
)


class TestMakeDistribution:
    """Test the standardized distribution menu"""

    def test_fourth_moments(self):
        assert make_distribution("gaussian").nu4 == 3.0
        assert make_distribution("uniform").nu4 == pytest.approx(1.8)
        assert make_distribution("shifted_exponential").nu4 == 9.0
        assert make_distribution("student_t", {"df": 8}).nu4 == pytest.approx(4.5)

    def test_accepts_enum_member(self):
        assert make_distribution(DistributionKind.UNIFORM).kind is DistributionKind.UNIFORM

    def test_unknown_kind_lists_allowed(self):
        with pytest.raises(DistributionError, match="Allowed kinds"):
            make_distribution("cauchy")

    def test_student_t_needs_finite_fourth_moment(self):
        with pytest.raises(DistributionError, match="df > 4"):
            make_distribution("student_t", {"df": 4})

    def test_invalid_parameters(self):
        with pytest.raises(DistributionError):
            make_distribution("uniform", {"half_width": -1})
        with pytest.raises(DistributionError):
            make_distribution("shifted_exponential", {"rate": 0})
        with pytest.raises(DistributionError):
            make_distribution("gaussian", {"sd": 2})

    @pytest.mark.parametrize("kind", ["gaussian", "uniform", "student_t", "shifted_exponential"])
    def test_draws_are_standardized(self, kind):
        dist = make_distribution(kind)
        draws = draw_standardized(dist, np.random.default_rng(1), 400_000)
        assert abs(draws.mean()) < 0.01
        assert draws.var() == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("kind,params", [
        ("gaussian", {}),
        ("uniform", {}),
        ("student_t", {"df": 12}),
        ("shifted_exponential", {}),
    ])
    def test_moments_within_five_standard_errors(self, kind, params):
        dist = make_distribution(kind, params)
        draws = draw_standardized(dist, np.random.default_rng(11), 100_000)
        size = draws.size
        for observed, target in [(draws, 0.0), (draws ** 2, 1.0), (draws ** 4, dist.nu4)]:
            se = observed.std() / math.sqrt(size)
            assert abs(observed.mean() - target) <= 5 * se

    @pytest.mark.parametrize("kind", ["gaussian", "uniform", "student_t", "shifted_exponential"])
    def test_draws_have_no_ties(self, kind):
        draws = draw_standardized(make_distribution(kind), np.random.default_rng(12), 100_000)
        assert np.unique(draws).size == draws.size

    def test_uniform_fourth_moment_matches(self):
        dist = make_distribution("uniform", {"half_width": 5.0})
        draws = draw_standardized(dist, np.random.default_rng(2), 400_000)
        assert np.mean(draws ** 4) == pytest.approx(dist.nu4, rel=0.01)
        assert np.max(np.abs(draws)) <= math.sqrt(3.0) + 1e-12


class TestSeedSpec:
    """Test substream keys"""

    def test_rejects_negative_and_oversized(self):
        with pytest.raises(DimensionError):
            SeedSpec(-1)
        with pytest.raises(DimensionError):
            SeedSpec(0, 2**64)
        with pytest.raises(DimensionError):
            SeedSpec(True)

    def test_same_key_same_stream(self):
        a = SeedSpec(99, 5).generator().standard_normal(10)
        b = SeedSpec(99, 5).generator().standard_normal(10)
        assert np.array_equal(a, b)

    def test_stream_ids_differ(self):
        a = SeedSpec(99, 5).generator().standard_normal(10)
        b = SeedSpec(99, 6).generator().standard_normal(10)
        assert not np.array_equal(a, b)

    def test_child_generators_are_independent_streams(self):
        first, second = SeedSpec(3, 1).generators(2)
        assert not np.array_equal(first.standard_normal(5), second.standard_normal(5))

    def test_derive_seed_is_deterministic(self):
        assert derive_seed(10, 0) == derive_seed(10, 0)
        assert derive_seed(10, 0) != derive_seed(10, 1)
        assert 0 <= derive_seed(10, 2) < 2**64


class TestDataMatrix:
    """Test the p x n data matrix"""

    def test_shape_and_read_only(self, small_matrix):
        assert (small_matrix.p, small_matrix.n) == (6, 20)
        with pytest.raises(ValueError):
            small_matrix.entries[0, 0] = 1.0

    def test_requires_p_less_than_n(self):
        with pytest.raises(DimensionError, match="p < n"):
            DataMatrix(np.ones((4, 4)))
        with pytest.raises(DimensionError):
            sample_data_matrix(make_distribution("gaussian"), 5, 5, SeedSpec(0))

    def test_one_based_accessors(self, small_matrix):
        assert np.array_equal(small_matrix.row(1), small_matrix.entries[0])
        assert np.array_equal(small_matrix.column(20), small_matrix.entries[:, 19])
        with pytest.raises(DimensionError):
            small_matrix.row(0)
        with pytest.raises(DimensionError):
            small_matrix.column(21)

    def test_row_swap_and_removal(self, small_matrix):
        swapped = small_matrix.with_rows_swapped(2, 6)
        assert np.array_equal(swapped.row(2), small_matrix.row(6))
        assert np.array_equal(swapped.row(6), small_matrix.row(2))
        reduced = small_matrix.without_row(3)
        assert reduced.shape == (5, 20)
        assert np.array_equal(reduced[2], small_matrix.row(4))

    def test_reproducible_bitwise(self, gaussian):
        a = sample_data_matrix(gaussian, 5, 12, SeedSpec(42, 7))
        b = sample_data_matrix(gaussian, 5, 12, SeedSpec(42, 7))
        assert np.array_equal(a.entries, b.entries)
