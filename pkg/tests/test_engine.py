import math

import numpy as np
import pytest

from preclt.core.exceptions import AuditFailureError, ConfigValidationError
from preclt.services import engine, precision
from preclt.services.clt import rho_limit
from preclt.services.engine import (
    RunContext,
    _chunk_bounds,
    map_replicates,
    monte_carlo_engine,
    pair_replicate,
    reference_mean,
    reference_variance,
    run_monte_carlo,
    single_entry_replicate,
    summarize,
)


class TestReplicateKernels:
    """Test one replicate of each per-replicate mode"""

    def test_single_entry_sample(self, make_config):
        cfg = make_config(q_indices=[1, 10])
        samples = single_entry_replicate(cfg, RunContext.from_config(cfg), 0)
        assert [s.q for s in samples] == [1, 10]
        for s in samples:
            assert (s.n, s.p, s.rep_id, s.mode) == (40, 10, 0, "single_entry")
            m = 31
            assert s.t_value == pytest.approx(math.sqrt(m) * (m / 40 * s.raw_entry - 1.0))
            assert s.rho_n == 2.0

    def test_deterministic_per_replicate(self, make_config):
        cfg = make_config()
        ctx = RunContext.from_config(cfg)
        assert single_entry_replicate(cfg, ctx, 5) == single_entry_replicate(cfg, ctx, 5)
        assert single_entry_replicate(cfg, ctx, 5) != single_entry_replicate(cfg, ctx, 6)

    def test_pair_sample(self, make_config):
        cfg = make_config(mode="pair", distribution="uniform")
        samples = pair_replicate(cfg, RunContext.from_config(cfg), 3)
        assert [s.q for s in samples] == [9, 10]
        assert all(s.rho_n is not None and s.rho_n >= 0.8 for s in samples)

    def test_pair_matches_single_entry(self, make_config):
        pair_cfg = make_config(mode="pair")
        single_cfg = make_config(q_indices=[9, 10])
        pair = pair_replicate(pair_cfg, RunContext.from_config(pair_cfg), 2)
        single = single_entry_replicate(single_cfg, RunContext.from_config(single_cfg), 2)
        for a, b in zip(pair, single):
            assert a.raw_entry == pytest.approx(b.raw_entry, rel=1e-8)

    def test_audit_failure_raises(self, make_config, monkeypatch):
        cfg = make_config()
        monkeypatch.setattr(engine, "quadform_entry", _perturbed_quadform)
        with pytest.raises(AuditFailureError, match="Replicate 0"):
            single_entry_replicate(cfg, RunContext.from_config(cfg), 0)

    def test_unaudited_replicate_skips_direct_path(self, make_config, monkeypatch):
        cfg = make_config(replicates=1000)
        assert cfg.audit_every == 10
        monkeypatch.setattr(engine, "quadform_entry", _perturbed_quadform)
        single_entry_replicate(cfg, RunContext.from_config(cfg), 3)

    def test_pair_factorizes_once(self, make_config, monkeypatch):
        calls = []
        original = precision.qr_factors

        def counting(a, method="mgs"):
            calls.append(method)
            return original(a, method)

        monkeypatch.setattr(precision, "qr_factors", counting)
        cfg = make_config(mode="pair")
        samples = pair_replicate(cfg, RunContext.from_config(cfg), 0)
        assert len(samples) == 2
        assert calls == ["mgs"]


def _perturbed_quadform(x, q, method="mgs"):
    from preclt.services.precision import quadform_entry
    result = quadform_entry(x, q, method)
    return result._replace(entry=result.entry * 1.001)


class TestParallelMap:
    """Test chunking and worker invariance"""

    def test_chunk_bounds_cover_all_ids(self):
        for count, workers in ((10, 1), (10, 3), (7, 8), (1000, 4)):
            ids = [i for chunk in _chunk_bounds(count, workers) for i in chunk]
            assert ids == list(range(count))

    def test_empty_run(self, make_config):
        assert map_replicates(make_config(), single_entry_replicate, 0) == []

    def test_worker_count_invariance(self, make_config):
        cfg = make_config(replicates=12)
        serial = map_replicates(cfg, single_entry_replicate, 12, workers=1)
        parallel = map_replicates(cfg, single_entry_replicate, 12, workers=2)
        assert serial == parallel

    @pytest.mark.parametrize("mode", ["single_entry", "pair"])
    def test_eight_workers_match_serial(self, make_config, mode):
        cfg = make_config(mode=mode, replicates=24)
        serial = monte_carlo_engine.run(cfg, workers=1)
        parallel = monte_carlo_engine.run(cfg, workers=8)
        assert parallel.samples == serial.samples
        assert parallel.moments == serial.moments
        assert parallel.ks == serial.ks


class TestReferenceLaw:
    """Test the reference normal of each mode"""

    def test_single_entry(self, make_config):
        cfg = make_config(distribution="uniform")
        assert reference_variance(cfg, 10) == pytest.approx(2.0 + (1.8 - 3.0) * 0.75)
        m = 31
        assert reference_mean(cfg, 10) == pytest.approx(reference_variance(cfg, 10) * math.sqrt(m) / (m - 2))

    def test_chi_square(self, make_config):
        cfg = make_config(mode="chi_square_law")
        assert reference_variance(cfg, 10) == 2.0

    def test_wishart(self, make_config):
        cfg = make_config(mode="wishart_cov", sigma={"kind": "diagonal", "params": {"values": [2.0] * 10}})
        assert reference_variance(cfg, 1) == pytest.approx(2 * 0.25)
        assert reference_mean(cfg, 1) == pytest.approx(math.sqrt(30) * 0.5 / 29)


class TestNormalizer:
    """Test the rho_limit and rho_n normalizers"""

    def test_references_differ_for_non_gaussian_data(self, make_config):
        limit = monte_carlo_engine.run(make_config(distribution="uniform", p=40, n=60, replicates=30), workers=1)
        finite = monte_carlo_engine.run(
            make_config(distribution="uniform", p=40, n=60, replicates=30, normalizer="rho_n"), workers=1)
        assert limit.reference[40] != finite.reference[40]
        assert limit.reference[40]["var"] == pytest.approx(rho_limit(1.8, 40 / 60))
        assert finite.reference[40]["var"] == 1.0
        m = 21
        rho_mean = np.mean([s.rho_n for s in finite.samples])
        assert finite.reference[40]["mean"] == pytest.approx(math.sqrt(rho_mean) * math.sqrt(m) / (m - 2))

    def test_t_values_are_scaled_per_replicate(self, make_config):
        base = dict(distribution="uniform", p=40, n=60, replicates=10)
        limit = monte_carlo_engine.run(make_config(**base), workers=1)
        finite = monte_carlo_engine.run(make_config(normalizer="rho_n", **base), workers=1)
        for a, b in zip(limit.samples, finite.samples):
            assert (a.rep_id, a.q, a.raw_entry, a.rho_n) == (b.rep_id, b.q, b.raw_entry, b.rho_n)
            assert b.t_value == pytest.approx(a.t_value / math.sqrt(a.rho_n))
        assert any(s.rho_n != rho_limit(1.8, 40 / 60) for s in finite.samples)
        assert finite.ks_rho_n == {}
        assert set(limit.ks_rho_n) == {40}

    def test_gaussian_rho_n_is_a_rescaling(self, make_config):
        limit = monte_carlo_engine.run(make_config(replicates=20), workers=1)
        finite = monte_carlo_engine.run(make_config(replicates=20, normalizer="rho_n"), workers=1)
        assert finite.reference[10]["mean"] == pytest.approx(limit.reference[10]["mean"] / math.sqrt(2.0))
        assert finite.ks[10] == pytest.approx(limit.ks[10])

    def test_pair_mode(self, make_config):
        cfg = make_config(mode="pair", distribution="shifted_exponential", normalizer="rho_n")
        samples = pair_replicate(cfg, RunContext.from_config(cfg), 1)
        limit_cfg = make_config(mode="pair", distribution="shifted_exponential")
        unscaled = pair_replicate(limit_cfg, RunContext.from_config(limit_cfg), 1)
        for a, b in zip(unscaled, samples):
            assert b.t_value == pytest.approx(a.t_value / math.sqrt(a.rho_n))
        assert reference_variance(cfg, 10) == 1.0

    def test_other_modes_keep_their_reference(self, make_config):
        assert reference_variance(make_config(mode="chi_square_law"), 10) == 2.0


class TestSummarize:
    """Test aggregation of samples"""

    def test_summary_contents(self, make_config):
        cfg = make_config(replicates=60)
        summary = monte_carlo_engine.run(cfg, workers=1)
        assert summary.replicates == 60
        assert summary.audits == 60
        assert set(summary.moments) == {10}
        assert summary.moments[10].count == 60
        assert 0.0 <= summary.ks[10] <= 1.0
        assert summary.rho["rho_limit"] == 2.0
        assert summary.rho["rho_n_mean"] == 2.0
        assert summary.rho["rho_n_lower_bound_ok"]
        assert summary.reference[10]["var"] == 2.0
        assert summary.pair is None

    def test_pure_in_samples(self, make_config):
        cfg = make_config(replicates=30)
        summary = monte_carlo_engine.run(cfg, workers=1)
        shuffled = list(reversed(summary.samples))
        again = summarize(shuffled, cfg)
        assert again.samples == summary.samples
        assert again.moments == summary.moments
        assert again.ks == summary.ks

    def test_same_seed_same_summary(self, make_config):
        a = monte_carlo_engine.run(make_config(replicates=20), workers=1)
        b = monte_carlo_engine.run(make_config(replicates=20), workers=1)
        assert a.samples == b.samples
        assert a.moments == b.moments

    def test_chi_square_extra(self, make_config):
        cfg = make_config(mode="chi_square_law", replicates=50)
        summary = monte_carlo_engine.run(cfg, workers=1)
        assert summary.extra["chi_square"]["dof"] == 31
        assert 0.0 < summary.extra["chi_square"]["ks"] < 1.0
        for s in summary.samples:
            assert s.t_value == pytest.approx(math.sqrt(31) * (31 / s.raw_entry - 1.0))

    def test_pair_dependence_present(self, make_config):
        summary = monte_carlo_engine.run(make_config(mode="pair", replicates=50), workers=1)
        assert summary.pair is not None
        assert summary.pair.count == 50
        assert -1.0 <= summary.pair.corr <= 1.0

    def test_wishart_extra(self, make_config):
        cfg = make_config(mode="wishart_cov", sigma={"kind": "ar1", "params": {"r": 0.5}}, replicates=40)
        summary = monte_carlo_engine.run(cfg, workers=1)
        report = summary.extra["wishart"]
        assert (report["q1"], report["q2"]) == (1, 2)
        psi = cfg.population_covariance().inverse
        assert report["stated"] == pytest.approx(2 * psi[0, 1])
        assert report["squared"] == pytest.approx(2 * psi[0, 1] ** 2)
        assert report["empirical"] == pytest.approx(summary.pair.cov)
        assert report["closer"] in ("stated", "squared", "tie")

    def test_single_replicate_has_no_moments(self, make_config):
        summary = monte_carlo_engine.run(make_config(replicates=1), workers=1)
        assert summary.replicates == 1
        assert summary.moments == {}

    def test_values(self, make_config):
        summary = monte_carlo_engine.run(make_config(q_indices=[1, 10], replicates=5), workers=1)
        assert summary.values(1).shape == (5,)
        assert summary.values(3).size == 0


class TestRunMonteCarlo:
    """Test mode dispatch of the engine"""

    def test_rejects_non_replicate_modes(self, make_config):
        with pytest.raises(ConfigValidationError):
            run_monte_carlo(make_config(mode="rho_concentration"), workers=1)
        with pytest.raises(ConfigValidationError):
            monte_carlo_engine.run(make_config(mode="cramer_norm"), workers=1)

    def test_general_sigma_audits_pass(self, make_config):
        cfg = make_config(sigma={"kind": "ar1", "params": {"r": 0.5}}, replicates=10)
        summary = run_monte_carlo(cfg, workers=1)
        assert summary.audits == 10
        assert np.all(np.isfinite(summary.values(10)))


@pytest.mark.slow
class TestConvergenceDirection:
    """KS distance shrinks along a y-fixed path"""

    def test_ks_decreases_with_n(self, make_config):
        small = monte_carlo_engine.run(make_config(p=25, n=100, replicates=20000, qr_method="cgs2"))
        large = monte_carlo_engine.run(make_config(p=100, n=400, replicates=20000, qr_method="cgs2"))
        assert large.ks[100] <= small.ks[25] + 0.01
