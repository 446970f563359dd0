"""
Verification metrics for Monte Carlo samples.

Moments with standard errors, Kolmogorov-Smirnov distances against normal
and exact reference laws, pairwise dependence, and plot-ready histograms.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..core.exceptions import DegenerateInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Moments:
    """Sample moments; kurtosis is the standardized fourth moment (3 for a normal)"""
    count: int
    mean: float
    variance: float
    skewness: float
    kurtosis: float
    mean_se: float
    variance_se: float
    skewness_se: float
    kurtosis_se: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class PairDependence:
    count: int
    cov: float
    corr: float
    cov_se: float
    corr_se: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    ref_density: np.ndarray

    def rows(self) -> List[Tuple[float, float, int, float, float]]:
        return [
            (float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i]),
             float(self.density[i]), float(self.ref_density[i]))
            for i in range(len(self.counts))
        ]


@dataclass(frozen=True)
class Verdict:
    """One checked assertion; status is pass, fail, skipped or reported (not asserted)"""
    name: str
    observed: Optional[float]
    threshold: str
    status: str

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    @classmethod
    def below(cls, name: str, observed: Optional[float], limit: float) -> "Verdict":
        if observed is None or not math.isfinite(observed):
            return cls(name, observed, f"< {limit:.6g}", "skipped")
        return cls(name, observed, f"< {limit:.6g}", "pass" if observed < limit else "fail")

    @classmethod
    def within(cls, name: str, observed: Optional[float], low: float, high: float) -> "Verdict":
        threshold = f"[{low:.6g}, {high:.6g}]"
        if observed is None or not math.isfinite(observed):
            return cls(name, observed, threshold, "skipped")
        return cls(name, observed, threshold, "pass" if low <= observed <= high else "fail")

    @classmethod
    def at_least(cls, name: str, observed: Optional[float], limit: float) -> "Verdict":
        if observed is None or not math.isfinite(observed):
            return cls(name, observed, f">= {limit:.6g}", "skipped")
        return cls(name, observed, f">= {limit:.6g}", "pass" if observed >= limit else "fail")

    @classmethod
    def holds(cls, name: str, condition: bool, observed: Optional[float] = None,
              threshold: str = "true") -> "Verdict":
        return cls(name, observed, threshold, "pass" if condition else "fail")

    @classmethod
    def reported(cls, name: str, observed: Optional[float], threshold: str = "reported only") -> "Verdict":
        return cls(name, observed, threshold, "reported")

    @classmethod
    def skipped(cls, name: str, threshold: str = "no samples") -> "Verdict":
        return cls(name, None, threshold, "skipped")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _as_samples(samples: Sequence[float], minimum: int) -> np.ndarray:
    values = np.asarray(samples, dtype=float).ravel()
    if values.size < minimum:
        raise DegenerateInputError(f"Need at least {minimum} samples, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise DegenerateInputError("Samples contain non-finite values")
    return values


def compute_moments(samples: Sequence[float]) -> Moments:
    """
    Mean, variance (ddof=1), skewness and kurtosis with standard errors.

    The variance standard error uses the empirical fourth central moment;
    skewness and kurtosis use the normal-theory sqrt(6/M) and sqrt(24/M).
    """
    values = _as_samples(samples, 2)
    m = values.size
    mean = float(np.mean(values))
    variance = float(np.var(values, ddof=1))
    centered = values - mean
    m4 = float(np.mean(centered ** 4))
    if variance > 0:
        skewness = float(stats.skew(values, bias=True))
        kurtosis = float(stats.kurtosis(values, fisher=False, bias=True))
    else:
        skewness, kurtosis = 0.0, float("nan")
    return Moments(
        count=m,
        mean=mean,
        variance=variance,
        skewness=skewness,
        kurtosis=kurtosis,
        mean_se=math.sqrt(variance / m),
        variance_se=math.sqrt(max(m4 - variance ** 2, 0.0) / m),
        skewness_se=math.sqrt(6.0 / m),
        kurtosis_se=math.sqrt(24.0 / m),
    )


def ks_statistic(samples: Sequence[float], ref_mean: float, ref_var: float) -> float:
    """
    Sup-distance between the empirical CDF and the normal(ref_mean, ref_var) CDF.

    Raises:
        DegenerateInputError: fewer than 2 samples or ref_var <= 0
    """
    values = _as_samples(samples, 2)
    if not ref_var > 0:
        raise DegenerateInputError(f"Reference variance must be positive, got {ref_var}")
    return float(stats.kstest(values, "norm", args=(ref_mean, math.sqrt(ref_var))).statistic)


def ks_distance(samples: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """KS distance against an arbitrary continuous reference CDF (e.g. a chi-square law)"""
    values = _as_samples(samples, 2)
    return float(stats.kstest(values, cdf).statistic)


def ks_two_sample(first: Sequence[float], second: Sequence[float]) -> Tuple[float, float]:
    """Two-sample KS distance and p-value"""
    a = _as_samples(first, 2)
    b = _as_samples(second, 2)
    result = stats.ks_2samp(a, b)
    return float(result.statistic), float(result.pvalue)


def ks_critical_value(count: int, alpha: float = 0.01, inflation: float = 1.5) -> float:
    """
    Asymptotic Kolmogorov critical value c(alpha)/sqrt(M), inflated to absorb
    the finite-n error of the limit law.
    """
    if count < 1:
        raise DegenerateInputError("Critical value needs at least one sample")
    c_alpha = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return inflation * c_alpha / math.sqrt(count)


def pair_dependence(pairs: Sequence[Tuple[float, float]]) -> PairDependence:
    """
    Empirical covariance and correlation of (T_p, T_{p-1}) pairs.

    Raises:
        DegenerateInputError: fewer than 2 pairs or a constant coordinate
    """
    array = np.asarray(pairs, dtype=float)
    if array.ndim != 2 or array.shape[1] != 2 or array.shape[0] < 2:
        raise DegenerateInputError("Need at least 2 pairs of values")
    if not np.all(np.isfinite(array)):
        raise DegenerateInputError("Pairs contain non-finite values")
    a, b = array[:, 0], array[:, 1]
    m = array.shape[0]
    sa, sb = float(np.std(a, ddof=1)), float(np.std(b, ddof=1))
    if sa == 0 or sb == 0:
        raise DegenerateInputError("Correlation undefined for a constant coordinate")
    da, db = a - a.mean(), b - b.mean()
    cov = float(np.sum(da * db) / (m - 1))
    corr = max(-1.0, min(1.0, cov / (sa * sb)))
    cov_se = math.sqrt(max(float(np.mean((da * db) ** 2)) - (float(np.mean(da * db))) ** 2, 0.0) / m)
    corr_se = (1.0 - corr ** 2) / math.sqrt(m)
    return PairDependence(count=m, cov=cov, corr=corr, cov_se=cov_se, corr_se=corr_se)


def histogram(samples: Sequence[float], ref_mean: float, ref_var: float,
              bins: Optional[int] = None) -> Histogram:
    """
    ceil(sqrt(M)) equal-width bins covering [min, max], with the normal
    reference density at the bin centers.
    """
    values = _as_samples(samples, 1)
    count = bins or max(1, math.ceil(math.sqrt(values.size)))
    low, high = float(values.min()), float(values.max())
    if low == high:
        low, high = low - 0.5, high + 0.5
    counts, edges = np.histogram(values, bins=count, range=(low, high))
    widths = np.diff(edges)
    density = counts / (values.size * widths)
    centers = 0.5 * (edges[:-1] + edges[1:])
    ref_density = stats.norm.pdf(centers, loc=ref_mean, scale=math.sqrt(ref_var))
    return Histogram(edges, counts, density, ref_density)
