"""
Monte Carlo Engine

Runs M independent replicates of one experiment mode. Replicate rep_id draws
from the substream (master_seed, rep_id), so results are invariant to worker
count and scheduling; chunks of replicate ids are farmed out to a process pool
and merged back in rep_id order.
"""
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from ..core.config import config
from ..core.exceptions import AuditFailureError, ConfigValidationError
from ..core.experiment_config import SAMPLE_MODES, ExperimentConfig, Mode, Normalizer
from .clt import (
    StandardizedSample,
    chi_square_statistic,
    rho_limit,
    rho_lower_bound_holds,
    rho_n,
    standardize_entry,
    standardize_rho_n,
    wishart_covariance_candidates,
    wishart_scaled_entry,
)
from .metrics import (
    Moments,
    PairDependence,
    Verdict,
    compute_moments,
    ks_distance,
    ks_statistic,
    pair_dependence,
)
from .precision import (
    PopulationCovariance,
    pair_quadform_with_projectors,
    precision_diag_direct,
    quadform_entry,
    sample_covariance,
)
from .randgen import DataMatrix, SeedSpec, sample_data_matrix

logger = logging.getLogger(__name__)

CHUNKS_PER_WORKER = 4

# =============================================================================
# RUN CONTEXT
# =============================================================================

@dataclass(frozen=True, eq=False)
class RunContext:
    """Per-process state derived once from the config"""
    sigma: Optional[PopulationCovariance]
    sigma_inv_diag: Optional[np.ndarray] = field(repr=False)

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "RunContext":
        if cfg.p is None:
            return cls(None, None)
        sigma = cfg.population_covariance()
        return cls(sigma, sigma.inverse_diag)

    def transform(self, x: DataMatrix) -> DataMatrix:
        if self.sigma is None or self.sigma.is_identity:
            return x
        return self.sigma.transform(x)


Kernel = Callable[[ExperimentConfig, RunContext, int], List[Any]]

# =============================================================================
# REPLICATE KERNELS
# =============================================================================

def _draw(cfg: ExperimentConfig, rep_id: int) -> DataMatrix:
    return sample_data_matrix(cfg.distribution, cfg.p, cfg.n, SeedSpec(cfg.master_seed, rep_id))


def _direct_diag(cfg: ExperimentConfig, y: DataMatrix, rep_id: int) -> Optional[np.ndarray]:
    if rep_id % cfg.audit_every:
        return None
    return precision_diag_direct(sample_covariance(y))


def _audit(value: float, direct: Optional[np.ndarray], rep_id: int, q: int) -> None:
    if direct is None:
        return
    reference = float(direct[q - 1])
    gap = abs(value - reference) / abs(reference)
    if not gap < config.audit_rtol:
        raise AuditFailureError(
            f"Replicate {rep_id}, q={q}: quadratic-form path {value!r} differs from the "
            f"direct inverse {reference!r} by {gap:.3e} (relative)"
        )
    logger.debug(f"Audit passed for replicate {rep_id}, q={q} (gap {gap:.2e})")


def _normalized_sample(cfg: ExperimentConfig, ctx: RunContext, rep_id: int, q: int,
                       entry: float, diag: np.ndarray) -> StandardizedSample:
    """T_q under the configured normalizer: sqrt(rho) scale, or T_q / sqrt(rho_n) per replicate"""
    rho = rho_n(diag, cfg.n, cfg.p, cfg.nu4).rho_n
    t_value = standardize_entry(entry, float(ctx.sigma_inv_diag[q - 1]), cfg.n, cfg.p)
    if cfg.normalizer is Normalizer.RHO_N:
        t_value = standardize_rho_n(t_value, rho)
    return StandardizedSample(rep_id, cfg.mode.value, q, cfg.n, cfg.p, entry, t_value, rho)


def single_entry_replicate(cfg: ExperimentConfig, ctx: RunContext, rep_id: int) -> List[StandardizedSample]:
    """(Sigma-hat^{-1})_qq via n / (y_q' P y_q), standardized into T_q"""
    y = ctx.transform(_draw(cfg, rep_id))
    direct = _direct_diag(cfg, y, rep_id)
    samples = []
    for q in cfg.q_indices:
        result = quadform_entry(y, q, cfg.qr_method)
        _audit(result.entry, direct, rep_id, q)
        samples.append(_normalized_sample(cfg, ctx, rep_id, q, result.entry, result.projector.diagonal()))
    return samples


def pair_replicate(cfg: ExperimentConfig, ctx: RunContext, rep_id: int) -> List[StandardizedSample]:
    """T_p and T_{p-1} from one shared P(p-2) and a single QR factorization"""
    p = cfg.p
    y = ctx.transform(_draw(cfg, rep_id))
    direct = _direct_diag(cfg, y, rep_id)
    entries, projectors = pair_quadform_with_projectors(y, cfg.qr_method)
    samples = []
    for q, entry, projector in ((p - 1, entries.second_last, projectors.difference),
                                (p, entries.last, projectors.p_pm1)):
        _audit(entry, direct, rep_id, q)
        samples.append(_normalized_sample(cfg, ctx, rep_id, q, entry, projector.diagonal()))
    return samples


def chi_square_replicate(cfg: ExperimentConfig, ctx: RunContext, rep_id: int) -> List[StandardizedSample]:
    """r_pp^2 = b_p' P(p-1) b_p, exactly chi-square with n - p + 1 dof for Gaussian data"""
    x = _draw(cfg, rep_id)
    direct = _direct_diag(cfg, x, rep_id)
    result = quadform_entry(x, cfg.p, cfg.qr_method)
    _audit(result.entry, direct, rep_id, cfg.p)
    t_value = chi_square_statistic(result.form, cfg.n, cfg.p)
    return [StandardizedSample(rep_id, cfg.mode.value, cfg.p, cfg.n, cfg.p, result.form, t_value)]


def wishart_replicate(cfg: ExperimentConfig, ctx: RunContext, rep_id: int) -> List[StandardizedSample]:
    y = ctx.transform(_draw(cfg, rep_id))
    direct = _direct_diag(cfg, y, rep_id)
    samples = []
    for q in cfg.q_indices:
        entry = quadform_entry(y, q, cfg.qr_method).entry
        _audit(entry, direct, rep_id, q)
        t_value = wishart_scaled_entry(entry, float(ctx.sigma_inv_diag[q - 1]), cfg.n, cfg.p)
        samples.append(StandardizedSample(rep_id, cfg.mode.value, q, cfg.n, cfg.p, entry, t_value))
    return samples


KERNELS: Dict[Mode, Kernel] = {
    Mode.SINGLE_ENTRY: single_entry_replicate,
    Mode.PAIR: pair_replicate,
    Mode.CHI_SQUARE_LAW: chi_square_replicate,
    Mode.WISHART_COV: wishart_replicate,
}

# =============================================================================
# PARALLEL MAP
# =============================================================================

def _run_chunk(cfg: ExperimentConfig, kernel: Kernel, start: int, stop: int) -> List[Any]:
    ctx = RunContext.from_config(cfg)
    results: List[Any] = []
    for rep_id in range(start, stop):
        results.extend(kernel(cfg, ctx, rep_id))
    return results


def _chunk_bounds(count: int, workers: int) -> List[range]:
    chunks = max(1, min(count, workers * CHUNKS_PER_WORKER))
    size = math.ceil(count / chunks)
    return [range(start, min(start + size, count)) for start in range(0, count, size)]


def map_replicates(cfg: ExperimentConfig, kernel: Kernel, count: int, workers: int = 1) -> List[Any]:
    """
    Apply kernel to rep_ids 0..count-1 and concatenate the results in rep_id order.

    kernel must be a module-level function so worker processes can import it.
    """
    if count <= 0:
        return []
    bounds = _chunk_bounds(count, workers)
    if workers <= 1 or len(bounds) == 1:
        return _run_chunk(cfg, kernel, 0, count)

    results: List[Any] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, cfg, kernel, chunk.start, chunk.stop) for chunk in bounds]
        for future in futures:
            results.extend(future.result())
    return results

# =============================================================================
# SUMMARY
# =============================================================================

@dataclass
class McSummary:
    """Aggregate of one run; every field except samples is recomputable from samples and config"""
    config: ExperimentConfig
    samples: List[StandardizedSample]
    moments: Dict[int, Moments] = field(default_factory=dict)
    ks: Dict[int, float] = field(default_factory=dict)
    ks_rho_n: Dict[int, float] = field(default_factory=dict)
    reference: Dict[int, Dict[str, float]] = field(default_factory=dict)
    pair: Optional[PairDependence] = None
    rho: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    audits: int = 0

    @property
    def replicates(self) -> int:
        return len({s.rep_id for s in self.samples})

    @property
    def master_seed(self) -> int:
        return self.config.master_seed

    @property
    def config_hash(self) -> str:
        return self.config.config_hash

    def values(self, q: int) -> np.ndarray:
        return np.array([s.t_value for s in self.samples if s.q == q])


def _rho_normalized(cfg: ExperimentConfig) -> bool:
    return cfg.normalizer is Normalizer.RHO_N and cfg.mode in (Mode.SINGLE_ENTRY, Mode.PAIR)


def reference_variance(cfg: ExperimentConfig, q: int) -> float:
    """Variance of the limiting normal law of the mode's statistic"""
    if cfg.mode is Mode.CHI_SQUARE_LAW:
        return 2.0
    if cfg.mode is Mode.WISHART_COV:
        psi_qq = float(cfg.population_covariance().inverse[q - 1, q - 1])
        return 2.0 * psi_qq ** 2
    if _rho_normalized(cfg):
        return 1.0
    return rho_limit(cfg.nu4, cfg.y)


def reference_mean(cfg: ExperimentConfig, q: int, rho_n_mean: Optional[float] = None) -> float:
    """
    Finite-n centre of the statistic.

    T is centred at E[m / r^2] - 1 scaled by sqrt(m), m = n - p + 1, which is
    rho sqrt(m) / (m - 2): exact for Gaussian data (r^2 ~ chi-square(m)) and
    first-order otherwise. Under the rho_n normalizer T / sqrt(rho_n) is
    centred at sqrt(rho_n) sqrt(m) / (m - 2), with rho_n averaged over the
    run (rho when no average is given). The wishart statistic has mean
    sqrt(k) psi_qq / (k - 1).
    """
    if cfg.mode is Mode.WISHART_COV:
        k = cfg.n - cfg.p
        psi_qq = float(cfg.population_covariance().inverse[q - 1, q - 1])
        return math.sqrt(k) * psi_qq / (k - 1) if k > 1 else 0.0
    m = cfg.n - cfg.p + 1
    if m <= 2:
        return 0.0
    if _rho_normalized(cfg):
        rho = rho_n_mean if rho_n_mean is not None else rho_limit(cfg.nu4, cfg.y)
        return math.sqrt(rho) * math.sqrt(m) / (m - 2)
    return reference_variance(cfg, q) * math.sqrt(m) / (m - 2)


def _by_q(samples: Sequence[StandardizedSample]) -> "OrderedDict[int, List[StandardizedSample]]":
    grouped: "OrderedDict[int, List[StandardizedSample]]" = OrderedDict()
    for sample in sorted(samples, key=lambda s: (s.q, s.rep_id)):
        grouped.setdefault(sample.q, []).append(sample)
    return grouped


def _pairs(samples: Sequence[StandardizedSample], first: int, second: int) -> List[tuple]:
    by_rep: Dict[int, Dict[int, float]] = {}
    for sample in samples:
        by_rep.setdefault(sample.rep_id, {})[sample.q] = sample.t_value
    return [(row[first], row[second]) for _, row in sorted(by_rep.items()) if first in row and second in row]


def summarize(samples: Sequence[StandardizedSample], cfg: ExperimentConfig) -> McSummary:
    """
    Aggregate per-replicate samples into an McSummary.

    Pure in (samples, cfg): the report subcommand rebuilds the same summary
    from the per-sample CSV.
    """
    ordered = sorted(samples, key=lambda s: (s.rep_id, s.q))
    summary = McSummary(config=cfg, samples=ordered)
    rep_ids = {s.rep_id for s in ordered}
    summary.audits = sum(1 for r in rep_ids if r % cfg.audit_every == 0)

    rho_values = [s.rho_n for s in ordered if s.rho_n is not None]
    summary.rho = {
        "nu4": cfg.nu4,
        "y": cfg.y,
        "rho_limit": rho_limit(cfg.nu4, cfg.y) if cfg.mode in (Mode.SINGLE_ENTRY, Mode.PAIR) else None,
        "rho_n_mean": float(np.mean(rho_values)) if rho_values else None,
        "rho_n_lower_bound_ok": all(rho_lower_bound_holds(r, cfg.nu4) for r in rho_values),
    }

    rho_normalized = _rho_normalized(cfg)
    for q, group in _by_q(ordered).items():
        group_rho = [s.rho_n for s in group if s.rho_n is not None]
        ref_var = reference_variance(cfg, q)
        ref_mean = reference_mean(cfg, q, float(np.mean(group_rho)) if group_rho else None)
        summary.reference[q] = {"mean": ref_mean, "var": ref_var}
        t_values = [s.t_value for s in group]
        if len(t_values) < 2:
            continue
        summary.moments[q] = compute_moments(t_values)
        summary.ks[q] = ks_statistic(t_values, ref_mean, ref_var)
        if not rho_normalized and len(group_rho) >= 2:
            # Side diagnostic: the same run rescaled by the per-replicate rho_n
            scaled = [standardize_rho_n(s.t_value, s.rho_n) for s in group if s.rho_n is not None]
            scaled_mean = math.sqrt(float(np.mean(group_rho))) * ref_mean / ref_var
            summary.ks_rho_n[q] = ks_statistic(scaled, scaled_mean, 1.0)
        if cfg.mode is Mode.CHI_SQUARE_LAW:
            dof = cfg.n - cfg.p + 1
            raw = [s.raw_entry for s in group]
            summary.extra["chi_square"] = {"dof": dof, "ks": ks_distance(raw, stats.chi2(dof).cdf)}

    if cfg.mode in (Mode.PAIR, Mode.WISHART_COV):
        first, second = (cfg.p, cfg.p - 1) if cfg.mode is Mode.PAIR else cfg.q_indices
        pairs = _pairs(ordered, first, second)
        if len(pairs) >= 2:
            summary.pair = pair_dependence(pairs)

    if cfg.mode is Mode.WISHART_COV:
        q1, q2 = cfg.q_indices
        candidates = wishart_covariance_candidates(cfg.population_covariance().inverse, q1, q2, cfg.n, cfg.p)
        report: Dict[str, Any] = {
            "q1": q1,
            "q2": q2,
            "stated": candidates.stated,
            "squared": candidates.squared,
            "exact": candidates.exact,
            "empirical": None,
            "se": None,
            "closer": None,
        }
        if summary.pair is not None:
            empirical = summary.pair.cov
            report.update(empirical=empirical, se=summary.pair.cov_se)
            gaps = {"stated": abs(empirical - candidates.stated), "squared": abs(empirical - candidates.squared)}
            report["closer"] = "tie" if gaps["stated"] == gaps["squared"] else min(gaps, key=gaps.get)
        summary.extra["wishart"] = report

    return summary

# =============================================================================
# ENGINE SERVICE
# =============================================================================

class MonteCarloEngine:
    """Runs the per-replicate modes and aggregates their samples"""

    def run(self, cfg: ExperimentConfig, workers: Optional[int] = None) -> McSummary:
        """
        Run cfg.replicates replicates of cfg.mode.

        Args:
            cfg: validated config of a per-replicate mode
            workers: requested worker count; PRECLT_WORKERS wins when set

        Returns:
            McSummary sorted by (rep_id, q)

        Raises:
            ConfigValidationError: mode has no replicate kernel
            AuditFailureError: an audited replicate disagrees with the direct inverse
        """
        kernel = KERNELS.get(cfg.mode)
        if kernel is None:
            raise ConfigValidationError(f"Mode {cfg.mode.value} is not a per-replicate mode")
        worker_count = config.resolve_workers(workers)
        logger.info(
            f"Monte Carlo run: mode={cfg.mode.value}, p={cfg.p}, n={cfg.n}, M={cfg.replicates}, "
            f"dist={cfg.distribution.kind.value}, workers={worker_count}, config={cfg.config_hash[:12]}"
        )
        samples = map_replicates(cfg, kernel, cfg.replicates, worker_count)
        summary = summarize(samples, cfg)
        logger.info(f"Run complete: {summary.replicates} replicates, {summary.audits} audited")
        return summary


# Global engine instance
monte_carlo_engine = MonteCarloEngine()


def run_monte_carlo(cfg: ExperimentConfig, workers: Optional[int] = None) -> McSummary:
    """
    Run one experiment and return its summary.

    Per-replicate modes go through the engine; scale_separation runs its
    ladder and returns the ladder report in summary.extra.
    """
    if cfg.mode in SAMPLE_MODES:
        return monte_carlo_engine.run(cfg, workers)
    if cfg.mode is Mode.SCALE_SEPARATION:
        from .experiments import scale_separation
        summary = McSummary(config=cfg, samples=[])
        summary.extra["scale_separation"] = scale_separation(cfg, workers)
        return summary
    raise ConfigValidationError(f"Mode {cfg.mode.value} is not a Monte Carlo mode")
