import math

import numpy as np
import pytest
from scipy import stats

from preclt.core.exceptions import DegenerateInputError
from preclt.services.metrics import (
    Verdict,
    compute_moments,
    histogram,
    ks_critical_value,
    ks_distance,
    ks_statistic,
    ks_two_sample,
    pair_dependence,
)


class TestMoments:
    """Test moments and their standard errors"""

    def test_normal_sample(self, rng):
        values = rng.normal(1.0, 2.0, 200_000)
        m = compute_moments(values)
        assert m.count == 200_000
        assert m.mean == pytest.approx(1.0, abs=5 * m.mean_se)
        assert m.variance == pytest.approx(4.0, abs=5 * m.variance_se)
        assert abs(m.skewness) < 5 * m.skewness_se
        assert m.kurtosis == pytest.approx(3.0, abs=5 * m.kurtosis_se)
        assert m.mean_se == pytest.approx(2.0 / math.sqrt(200_000), rel=0.01)
        # normal theory: se(var) = sigma^2 sqrt(2 / M)
        assert m.variance_se == pytest.approx(4.0 * math.sqrt(2 / 200_000), rel=0.05)

    def test_heavy_tails_widen_variance_se(self, rng):
        values = rng.standard_t(20, 100_000) / math.sqrt(20 / 18)
        m = compute_moments(values)
        assert m.kurtosis > 3.0
        assert m.variance_se > math.sqrt(2 / 100_000)

    def test_constant_sample(self):
        m = compute_moments([1.0, 1.0, 1.0])
        assert m.variance == 0.0
        assert m.skewness == 0.0
        assert math.isnan(m.kurtosis)

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateInputError):
            compute_moments([1.0])
        with pytest.raises(DegenerateInputError):
            compute_moments([1.0, float("nan")])


class TestKolmogorovSmirnov:
    """Test KS distances and critical values"""

    def test_matches_scipy(self, rng):
        values = rng.normal(0.0, 1.0, 500)
        expected = stats.kstest(values, "norm", args=(0.5, 2.0)).statistic
        assert ks_statistic(values, 0.5, 4.0) == pytest.approx(expected)

    def test_correct_law_passes_most_seeds(self):
        critical = ks_critical_value(2000, inflation=1.0)
        passes = sum(
            ks_statistic(np.random.default_rng(seed).normal(0.0, math.sqrt(2.0), 2000), 0.0, 2.0) < critical
            for seed in range(40)
        )
        assert passes >= 34

    def test_wrong_variance_is_detected(self, rng):
        values = rng.normal(0.0, 1.0, 20_000)
        assert ks_statistic(values, 0.0, 2.0) > ks_critical_value(20_000)

    def test_critical_value(self):
        c_alpha = math.sqrt(-0.5 * math.log(0.005))
        assert ks_critical_value(10_000) == pytest.approx(1.5 * c_alpha / 100)
        assert ks_critical_value(10_000, inflation=1.0) == pytest.approx(0.016276, abs=1e-5)
        with pytest.raises(DegenerateInputError):
            ks_critical_value(0)

    def test_arbitrary_reference(self, rng):
        values = rng.chisquare(7, 5000)
        assert ks_distance(values, stats.chi2(7).cdf) < ks_critical_value(5000)

    def test_two_sample(self, rng):
        a = rng.normal(size=3000)
        b = rng.normal(size=3000)
        statistic, p_value = ks_two_sample(a, b)
        assert 0.0 <= statistic < 0.06
        assert 0.0 <= p_value <= 1.0

    def test_exact_quantiles(self):
        count = 1000
        values = stats.norm.ppf((np.arange(1, count + 1) - 0.5) / count)
        assert ks_statistic(values, 0.0, 1.0) <= 1.0 / (2 * count) + 1e-6

    def test_atom_is_far_from_normal(self):
        assert ks_statistic([0.25] * 50, 0.0, 1.0) >= 0.5

    def test_reference_variance_must_be_positive(self):
        with pytest.raises(DegenerateInputError):
            ks_statistic([0.0, 1.0], 0.0, 0.0)


class TestPairDependence:
    """Test empirical covariance and correlation"""

    def test_independent_pairs(self, rng):
        pairs = rng.normal(size=(10_000, 2))
        dep = pair_dependence(pairs)
        assert abs(dep.corr) < 6 / math.sqrt(10_000)
        assert dep.corr_se == pytest.approx((1 - dep.corr ** 2) / 100)

    def test_correlated_pairs(self, rng):
        z = rng.normal(size=(20_000, 2))
        pairs = np.column_stack([z[:, 0], 0.6 * z[:, 0] + 0.8 * z[:, 1]])
        dep = pair_dependence(pairs)
        assert dep.corr == pytest.approx(0.6, abs=0.03)
        assert dep.cov == pytest.approx(0.6, abs=5 * dep.cov_se)

    def test_perfect_dependence(self):
        assert pair_dependence([(1.0, 1.0), (-1.0, -1.0)]).corr == pytest.approx(1.0)
        assert pair_dependence([(1.0, -1.0), (-1.0, 1.0)]).corr == pytest.approx(-1.0)

    def test_constant_coordinate(self):
        with pytest.raises(DegenerateInputError):
            pair_dependence([(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)])

    def test_too_few_pairs(self):
        with pytest.raises(DegenerateInputError):
            pair_dependence([(1.0, 2.0)])


class TestHistogram:
    """Test plot-ready histograms"""

    def test_bins_cover_range(self, rng):
        values = rng.normal(size=400)
        hist = histogram(values, 0.0, 1.0)
        assert len(hist.counts) == 20
        assert hist.edges[0] == values.min()
        assert hist.edges[-1] == values.max()
        assert hist.counts.sum() == 400
        assert float(np.sum(hist.density * np.diff(hist.edges))) == pytest.approx(1.0)

    def test_density_tracks_reference(self, rng):
        values = rng.normal(0.0, math.sqrt(2.0), 40_000)
        hist = histogram(values, 0.0, 2.0)
        centre = np.argmin(np.abs(0.5 * (hist.edges[:-1] + hist.edges[1:])))
        assert hist.density[centre] == pytest.approx(hist.ref_density[centre], rel=0.15)

    def test_rows(self):
        hist = histogram([0.0, 1.0, 2.0, 3.0], 0.0, 1.0, bins=2)
        rows = hist.rows()
        assert len(rows) == 2
        assert rows[0][:3] == (0.0, 1.5, 2)

    def test_single_value(self):
        hist = histogram([2.0], 0.0, 1.0)
        assert hist.counts.tolist() == [1]


class TestVerdict:
    """Test verdict construction"""

    def test_below(self):
        assert Verdict.below("x", 0.1, 0.2).status == "pass"
        assert Verdict.below("x", 0.3, 0.2).failed
        assert Verdict.below("x", None, 0.2).status == "skipped"
        assert Verdict.below("x", float("nan"), 0.2).status == "skipped"

    def test_within_and_at_least(self):
        assert Verdict.within("v", 2.0, 1.85, 2.15).status == "pass"
        assert Verdict.within("v", 2.2, 1.85, 2.15).failed
        assert Verdict.at_least("g", 3.0, 2.5).status == "pass"
        assert Verdict.at_least("g", 2.0, 2.5).failed

    def test_holds_and_reported(self):
        assert Verdict.holds("h", True).status == "pass"
        assert Verdict.holds("h", False).failed
        assert Verdict.reported("r", 1.0).status == "reported"
        assert not Verdict.reported("r", 1.0).failed
        assert Verdict.skipped("s").to_dict() == {
            "name": "s", "observed": None, "threshold": "no samples", "status": "skipped",
        }
