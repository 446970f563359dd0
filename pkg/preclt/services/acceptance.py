"""
Acceptance Service

Two verification tiers:
- identity suite: deterministic exact identities on seeded random instances
  (no Monte Carlo, seconds)
- statistical suite: the frozen Monte Carlo checks from data/acceptance.json
  (minutes)

The calibration suite checks every frozen threshold against the finite-n
Gaussian law in closed form; run_pilot records the empirical spread of the
checked statistics over fresh seeds.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import PrecltError
from ..core.experiment_config import Mode, config_from_dict
from .clt import gaussian_finite_n_gap
from .engine import McSummary, reference_variance
from .experiments import run_experiment
from .linalg import log_det_psd, projection_complement, qr_cross_check, qr_gram_schmidt
from .metrics import Verdict, ks_critical_value
from .precision import (
    PopulationCovariance,
    all_paths,
    lss_difference,
    max_relative_spread,
    precision_diag_cramer,
    precision_diag_direct,
    precision_diag_quadform,
    precision_pair_quadform,
    sample_covariance,
)
from .randgen import DistributionKind, SeedSpec, derive_seed, make_distribution, sample_data_matrix
from .reports import sample_verdicts
from .thresholds import thresholds

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    """Verdicts of one suite plus the failures that produced them"""
    name: str
    verdicts: List[Verdict] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not any(v.failed for v in self.verdicts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "failures": list(self.failures),
            "details": self.details,
        }

# =============================================================================
# IDENTITY SUITE
# =============================================================================

class _MaxTracker:
    def __init__(self):
        self.values: Dict[str, float] = {}

    def update(self, key: str, value: float) -> None:
        self.values[key] = max(self.values.get(key, 0.0), float(value))


def _projector_errors(rows: np.ndarray, n: int) -> Dict[str, float]:
    proj = projection_complement(rows, n=n)
    dense = proj.matrix
    return {
        "symmetry": float(np.max(np.abs(dense - dense.T))),
        "idempotence": float(np.max(np.abs(dense @ dense - dense))),
        "trace": abs(float(np.trace(dense)) - (n - rows.shape[0])),
    }


def _check_instance(index: int, seed: int, limits: Dict[str, Any], errors: _MaxTracker) -> Dict[str, Any]:
    dims_rng, data_rng, sigma_rng = SeedSpec(seed, index).generators(3)
    kinds = list(DistributionKind)
    dist = make_distribution(kinds[index % len(kinds)])
    p = int(dims_rng.integers(2, limits["max_p"] + 1))
    n = int(dims_rng.integers(p + limits["min_dof"], limits["max_n"] + 1))
    q = int(dims_rng.integers(1, p + 1))
    k = int(dims_rng.integers(0, p))
    x = sample_data_matrix(dist, p, n, SeedSpec(seed, index), rng=data_rng)
    info: Dict[str, Any] = {"p": p, "n": n, "q": q, "dist": dist.kind.value, "minor_consistent": True}

    paths = all_paths(x, q)
    errors.update("path_spread", max_relative_spread(list(paths.values())))

    for key, value in _projector_errors(x.entries[:k], n).items():
        errors.update(f"projector_{key}", value)

    full = qr_gram_schmidt(x.entries.T)
    if k >= 1:
        leading = qr_gram_schmidt(x.entries[:k].T)
        info["minor_consistent"] = bool(
            np.array_equal(leading.r_factor, full.r_factor[:k, :k])
            and np.array_equal(leading.q_factor, full.q_factor[:, :k])
        )

    log_gram = log_det_psd(x.entries @ x.entries.T)
    log_product = float(np.sum(np.log(full.r_diag_sq())))
    errors.update("determinant_product", abs(math.expm1(log_gram - log_product)))

    pair = precision_pair_quadform(x)
    direct = precision_diag_direct(sample_covariance(x))
    errors.update("pair_second_last", abs(pair.second_last - direct[p - 2]) / direct[p - 2])

    s = sample_covariance(x)
    lss = lss_difference(s, q, verify=False)
    errors.update("lss_identity", abs(lss - math.log(direct[q - 1])))

    sigma = PopulationCovariance.diagonal(sigma_rng.uniform(0.5, 2.0, p))
    y = sigma.transform(x)
    s_sigma = sample_covariance(x, sigma)
    direct_sigma = float(precision_diag_direct(s_sigma)[q - 1])
    errors.update("diagonal_sigma_paths", max_relative_spread([
        direct_sigma, precision_diag_cramer(s_sigma, q), precision_diag_quadform(y, q),
    ]))

    info["qr_ill_conditioned"] = qr_cross_check(x.entries.T).ill_conditioned
    return info


def run_identity_suite(instances: Optional[int] = None, seed: int = 0) -> SuiteResult:
    """
    Exact identities on seeded random instances (p <= 40, n <= 120, all four
    distributions in turn, diagonal sigma for the covariance paths).

    Checked: agreement of every precision path, projector symmetry,
    idempotence and trace, bitwise minor consistency of QR, |XX'| = prod r_ii^2,
    both pair-lemma paths, and the log-determinant difference identity.
    """
    limits = thresholds.get("identity")
    count = instances if instances is not None else limits["instances"]
    result = SuiteResult(name="identity")
    errors = _MaxTracker()
    inconsistent = 0
    errored = 0
    flagged = 0

    for index in range(count):
        try:
            info = _check_instance(index, seed, limits, errors)
        except PrecltError as e:
            errored += 1
            result.failures.append(f"instance {index}: {type(e).__name__}: {e}")
            logger.warning(f"Identity instance {index} failed: {e}")
            continue
        if not info["minor_consistent"]:
            inconsistent += 1
            result.failures.append(f"instance {index}: QR of leading rows differs from the full factorization")
        flagged += int(info["qr_ill_conditioned"])

    e = errors.values
    result.verdicts = [
        Verdict.holds("instances_completed", errored == 0, observed=float(count - errored),
                      threshold=f"all {count}"),
        Verdict.below("path_agreement_rtol", e.get("path_spread"), limits["path_rtol"]),
        Verdict.below("projector_symmetry", e.get("projector_symmetry"), limits["projector_atol"]),
        Verdict.below("projector_idempotence", e.get("projector_idempotence"), limits["projector_atol"]),
        Verdict.below("projector_trace", e.get("projector_trace"), limits["projector_atol"]),
        Verdict.holds("qr_minor_consistency", inconsistent == 0, observed=float(inconsistent),
                      threshold="0 mismatches"),
        Verdict.below("determinant_product_rtol", e.get("determinant_product"), limits["det_rtol"]),
        Verdict.below("pair_lemma_rtol", e.get("pair_second_last"), limits["pair_rtol"]),
        Verdict.below("lss_identity_atol", e.get("lss_identity"), limits["lss_atol"]),
        Verdict.below("diagonal_sigma_paths_rtol", e.get("diagonal_sigma_paths"), limits["path_rtol"]),
        Verdict.reported("qr_cross_check_flagged", float(flagged)),
    ]
    result.details = {"instances": count, "seed": seed, "max_errors": dict(e), "qr_flagged": flagged}
    logger.info(f"Identity suite: {count} instances, passed={result.passed}")
    return result

# =============================================================================
# STATISTICAL SUITE
# =============================================================================

def _check_verdicts(check: Dict[str, Any], summary: McSummary) -> List[Verdict]:
    name = check["name"]
    verdicts: List[Verdict] = []
    mode = summary.config.mode

    for q, moments in summary.moments.items():
        if "var_band" in check:
            low, high = check["var_band"]
            verdicts.append(Verdict.within(f"{name}_var_q{q}", moments.variance, low, high))
        if "ks_max" in check:
            verdicts.append(Verdict.below(f"{name}_ks_q{q}", summary.ks.get(q), check["ks_max"]))
        if "mean_abs_max" in check:
            gap = abs(moments.mean - summary.reference[q]["mean"])
            verdicts.append(Verdict.below(f"{name}_mean_q{q}", gap, check["mean_abs_max"]))
    if "chi_square_ks_max" in check:
        observed = summary.extra.get("chi_square", {}).get("ks")
        verdicts.append(Verdict.below(f"{name}_ks_chi_square", observed, check["chi_square_ks_max"]))
    if "corr_abs_max" in check:
        observed = abs(summary.pair.corr) if summary.pair else None
        verdicts.append(Verdict.below(f"{name}_corr_abs", observed, check["corr_abs_max"]))
    if mode is Mode.WISHART_COV:
        verdicts.extend(v for v in sample_verdicts(summary) if v.name.startswith("wishart"))

    for v in summary.verdicts:
        verdicts.append(Verdict(f"{name}_{v.name}", v.observed, v.threshold, v.status))
    if not verdicts:
        verdicts.append(Verdict.skipped(name, "no thresholds"))
    return verdicts


def run_statistical_suite(workers: Optional[int] = None, names: Optional[Sequence[str]] = None) -> SuiteResult:
    """
    Run the frozen Monte Carlo checks; names restricts the run to some checks.

    Every check's config is validated like a user config, so a check is
    reproducible with `simulate --config`.
    """
    result = SuiteResult(name="statistical")
    selected = [c for c in thresholds.statistical_checks() if names is None or c["name"] in names]
    for check in selected:
        cfg = config_from_dict(check["config"])
        logger.info(f"Statistical check {check['name']}: mode={cfg.mode.value}, M={cfg.replicates}")
        summary = run_experiment(cfg, workers)
        verdicts = _check_verdicts(check, summary)
        result.verdicts.extend(verdicts)
        result.details[check["name"]] = {
            "config_hash": cfg.config_hash,
            "failed": [v.name for v in verdicts if v.failed],
        }
        result.failures.extend(f"{check['name']}: {v.name}" for v in verdicts if v.failed)
    logger.info(f"Statistical suite: {len(selected)} checks, passed={result.passed}")
    return result

# =============================================================================
# CALIBRATION
# =============================================================================

def _finite_n_variance(rho: float, m: int) -> float:
    """Var(T) for Gaussian rows, 2 m^3 / ((m-2)^2 (m-4)), rescaled from 2 to rho"""
    return rho * m ** 3 / ((m - 2) ** 2 * (m - 4))


def _excess_kurtosis(m: int) -> float:
    """Excess kurtosis of the inverse chi-square law with m degrees of freedom"""
    return 12.0 * (5 * m - 22) / ((m - 6) * (m - 8))


def threshold_margins(check: Dict[str, Any]) -> Dict[str, float]:
    """
    Distance from each frozen threshold of a statistical check to the value a
    correct implementation should observe.

    Variance, mean and correlation margins are in standard errors of the
    checked statistic; KS margins are (threshold - finite-n gap) over the
    uninflated Kolmogorov critical value. Expected values come from the
    finite-n Gaussian law rescaled to rho, so they also serve as a proxy for
    the other distributions.
    """
    cfg = config_from_dict(check["config"])
    ks_cfg = thresholds.get("ks")
    count = cfg.replicates
    margins: Dict[str, float] = {}
    if cfg.p is None or cfg.n is None:
        return margins
    m = cfg.n - cfg.p + 1
    critical = ks_critical_value(count, ks_cfg["alpha"], 1.0)

    if m > 8 and ("var_band" in check or "mean_abs_max" in check):
        centre = _finite_n_variance(reference_variance(cfg, cfg.q_indices[0]), m)
        se = centre * math.sqrt((2.0 + _excess_kurtosis(m)) / (count - 1))
        if "var_band" in check:
            low, high = check["var_band"]
            margins["var_low"] = (centre - low) / se
            margins["var_high"] = (high - centre) / se
        if "mean_abs_max" in check:
            margins["mean"] = check["mean_abs_max"] / math.sqrt(centre / count)
    if "ks_max" in check and m > 2:
        margins["ks"] = (check["ks_max"] - gaussian_finite_n_gap(m)) / critical
    if "chi_square_ks_max" in check:
        margins["chi_square_ks"] = check["chi_square_ks_max"] / critical
    if "corr_abs_max" in check:
        # Diagonal precision entries of a Wishart inverse correlate at 1 / (n - p)
        margins["corr"] = (check["corr_abs_max"] - 1.0 / (m - 1)) * math.sqrt(count)
    return margins


def run_calibration_suite() -> SuiteResult:
    """Every frozen threshold sits at least min_se_margin SE (or one KS critical value) from its expectation"""
    minimum = thresholds.get("pilot")["min_se_margin"]
    result = SuiteResult(name="calibration")
    for check in thresholds.statistical_checks():
        margins = threshold_margins(check)
        for key, margin in margins.items():
            limit = 1.0 if key.endswith("ks") else minimum
            result.verdicts.append(Verdict.at_least(f"{check['name']}_{key}_margin", margin, limit))
        result.details[check["name"]] = margins
    result.failures = [v.name for v in result.verdicts if v.failed]
    logger.info(f"Calibration suite: {len(result.verdicts)} margins, passed={result.passed}")
    return result


def _spread(values: List[float]) -> Dict[str, Optional[float]]:
    if not values:
        return {"mean": None, "sd": None, "min": None, "max": None}
    data = np.asarray(values, dtype=float)
    return {
        "mean": float(np.mean(data)),
        "sd": float(np.std(data, ddof=1)) if data.size > 1 else None,
        "min": float(np.min(data)),
        "max": float(np.max(data)),
    }


def run_pilot(repeats: Optional[int] = None, workers: Optional[int] = None,
              names: Optional[Sequence[str]] = None) -> Dict[str, Any]:
    """
    Re-run statistical checks under fresh seeds and record, per verdict, the
    spread of the observed statistic next to its frozen threshold.

    Pilot seeds are derive_seed(check seed, seed_stream, i), disjoint from the
    frozen seed of the check itself.

    Returns:
        {check name: {"replicates", "seeds", "statistics": {verdict: {...}}}}
    """
    pilot_cfg = thresholds.get("pilot")
    repeats = repeats if repeats is not None else pilot_cfg["repeats"]
    record: Dict[str, Any] = {}
    selected = [c for c in thresholds.statistical_checks() if names is None or c["name"] in names]
    for check in selected:
        base = config_from_dict(check["config"])
        seeds = [derive_seed(base.master_seed, pilot_cfg["seed_stream"], i) for i in range(repeats)]
        observed: Dict[str, List[float]] = {}
        limits: Dict[str, str] = {}
        failures: Dict[str, int] = {}
        for seed in seeds:
            summary = run_experiment(base.derive(master_seed=seed), workers)
            for v in _check_verdicts(check, summary):
                limits[v.name] = v.threshold
                failures[v.name] = failures.get(v.name, 0) + int(v.failed)
                if v.observed is not None and math.isfinite(v.observed):
                    observed.setdefault(v.name, []).append(float(v.observed))
        record[check["name"]] = {
            "replicates": base.replicates,
            "seeds": seeds,
            "statistics": {
                name: dict(_spread(observed.get(name, [])), threshold=limits[name], failures=failures[name])
                for name in sorted(limits)
            },
        }
        logger.info(f"Pilot {check['name']}: {repeats} seeds, "
                    f"{sum(failures.values())} failing verdicts")
    return record
