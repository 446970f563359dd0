"""
Normalizers and standardized statistics.

The limiting variance rho = 2 + (nu4 - 3)(1 - y), its finite-n version
rho_n built from the projector diagonal, and the standardization of a
precision diagonal entry into the statistic T_q.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from ..core.exceptions import DomainError
from .linalg import ProjectionMatrix, projection_complement
from .randgen import DataMatrix

logger = logging.getLogger(__name__)

PII_TOLERANCE = 1e-12
RHO_BOUND_SLACK = 1e-9
GAP_GRID_POINTS = 4001

# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class StandardizedSample:
    """One standardized statistic T_q from one replicate"""
    rep_id: int
    mode: str
    q: int
    n: int
    p: int
    raw_entry: float
    t_value: float
    rho_n: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.t_value):
            raise DomainError(f"Non-finite statistic for replicate {self.rep_id}, q={self.q}")


@dataclass(frozen=True)
class RhoValues:
    rho_limit: float
    rho_n: float
    pii_sq_mean: float
    y: float


class PiiDiagnostics(NamedTuple):
    pii_sq_mean: float
    deviation_mean: float


# =============================================================================
# NORMALIZERS
# =============================================================================

def rho_limit(nu4: float, y: float) -> float:
    """
    rho = 2 + (nu4 - 3)(1 - y).

    Raises:
        DomainError: nu4 < 1 or y outside [0, 1)
    """
    if not math.isfinite(nu4) or nu4 < 1.0:
        raise DomainError(f"nu4 must be finite and >= 1, got {nu4}")
    if not 0.0 <= y < 1.0:
        raise DomainError(f"y must lie in [0, 1), got {y}")
    return 2.0 + (nu4 - 3.0) * (1.0 - y)


def rho_n(p_diag: np.ndarray, n: int, p: int, nu4: float) -> RhoValues:
    """
    rho_n = 2 + (nu4 - 3) / (n - p + 1) * sum p_ii^2 for P = P(p-1).

    Raises:
        DomainError: p >= n, wrong length, or p_ii outside [0, 1]
    """
    p_diag = np.asarray(p_diag, dtype=float)
    if p < 1 or p >= n:
        raise DomainError(f"p < n required with p >= 1, got p={p}, n={n}")
    if p_diag.shape != (n,):
        raise DomainError(f"Expected {n} diagonal entries, got shape {p_diag.shape}")
    if np.any(p_diag < -PII_TOLERANCE) or np.any(p_diag > 1.0 + PII_TOLERANCE):
        raise DomainError("Projector diagonal entries must lie in [0, 1]")
    sq_sum = float(np.sum(p_diag ** 2))
    value = 2.0 + (nu4 - 3.0) / (n - p + 1) * sq_sum
    y = p / n
    return RhoValues(rho_limit=rho_limit(nu4, y), rho_n=value, pii_sq_mean=sq_sum / n, y=y)


def rho_lower_bound_holds(rho_n_value: float, nu4: float) -> bool:
    """
    rho_n >= eps for nu4 = 1 + eps <= 3, since sum p_ii^2 <= tr P = n - p + 1.
    For nu4 > 3 the coefficient is non-negative and the bound is rho_n >= 2.
    """
    return rho_n_value >= min(2.0, nu4 - 1.0) - RHO_BOUND_SLACK


# =============================================================================
# STANDARDIZATION
# =============================================================================

def standardize_entry(entry: float, sigma_inv_qq: float, n: int, p: int) -> float:
    """
    T = sqrt(n-p+1) / s * ((n-p+1)/n * entry - s) with s = (Sigma^{-1})_qq.

    Raises:
        DomainError: s <= 0 or p >= n
    """
    if not sigma_inv_qq > 0:
        raise DomainError(f"(Sigma^-1)_qq must be positive, got {sigma_inv_qq}")
    if p < 1 or p >= n:
        raise DomainError(f"p < n required with p >= 1, got p={p}, n={n}")
    m = n - p + 1
    return math.sqrt(m) / sigma_inv_qq * (m / n * entry - sigma_inv_qq)


def standardize_entry_y0(entry: float, sigma_inv_qq: float, n: int) -> float:
    """sqrt(n) / s * (entry - s); the fixed-p form, limit N(0, nu4 - 1)"""
    if not sigma_inv_qq > 0:
        raise DomainError(f"(Sigma^-1)_qq must be positive, got {sigma_inv_qq}")
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    return math.sqrt(n) / sigma_inv_qq * (entry - sigma_inv_qq)


def standardize_rho_n(t_value: float, rho_n_value: float) -> float:
    """T / sqrt(rho_n), limit N(0, 1)"""
    if not rho_n_value > 0:
        raise DomainError(f"rho_n must be positive, got {rho_n_value}")
    return t_value / math.sqrt(rho_n_value)


def chi_square_statistic(r_sq: float, n: int, p: int) -> float:
    """sqrt(m) (m / r_pp^2 - 1), m = n - p + 1; equals T for Sigma = I"""
    if not r_sq > 0:
        raise DomainError(f"r_pp^2 must be positive, got {r_sq}")
    m = n - p + 1
    return math.sqrt(m) * (m / r_sq - 1.0)


def gaussian_finite_n_gap(m: int) -> float:
    """
    sup_t |P(T <= t) - F(t)| for Gaussian data, F the N(2 sqrt(m) / (m - 2), 2) cdf.

    For Gaussian rows T = sqrt(m) (m / chi2_m - 1) exactly, so the distance
    is the part of any KS statistic that no replicate count removes. It is
    invariant under rescaling T, so the rho_n-normalized statistic has the
    same gap.

    Raises:
        DomainError: m <= 2
    """
    if m <= 2:
        raise DomainError(f"finite-n gap needs m = n - p + 1 > 2, got {m}")
    mean = 2.0 * math.sqrt(m) / (m - 2)
    sd = math.sqrt(2.0)
    t = np.linspace(mean - 8.0 * sd, mean + 8.0 * sd, GAP_GRID_POINTS)
    ratio = 1.0 + t / math.sqrt(m)
    safe = np.where(ratio > 0, ratio, 1.0)
    exact = np.where(ratio > 0, stats.chi2.sf(m / safe, m), 0.0)
    return float(np.max(np.abs(exact - stats.norm.cdf(t, loc=mean, scale=sd))))


def wishart_scaled_entry(entry: float, psi_qq: float, n: int, p: int) -> float:
    """sqrt(k) ((k/n) entry - psi_qq) with k = n - p"""
    k = n - p
    if k < 1:
        raise DomainError(f"n - p must be positive, got {k}")
    return math.sqrt(k) * (k / n * entry - psi_qq)


class WishartCandidates(NamedTuple):
    stated: float
    squared: float
    exact: Optional[float]


def wishart_covariance_candidates(psi: np.ndarray, q1: int, q2: int, n: int, p: int) -> WishartCandidates:
    """
    Covariance of the scaled entries for q1 != q2, psi = Sigma^{-1}, k = n - p.

    stated: 2 psi_12; squared: 2 psi_12^2; exact: the finite-n
    inverse-Wishart value k^2 (2 psi_11 psi_22 + 2 (k-1) psi_12^2) / ((k-1)^2 (k-3)),
    undefined (None) for k <= 3. The exact value tends to the squared candidate.
    """
    psi = np.asarray(psi, dtype=float)
    a, b, c = psi[q1 - 1, q1 - 1], psi[q2 - 1, q2 - 1], psi[q1 - 1, q2 - 1]
    k = n - p
    exact = None
    if k > 3:
        exact = float(k ** 2 * (2 * a * b + 2 * (k - 1) * c ** 2) / ((k - 1) ** 2 * (k - 3)))
    return WishartCandidates(stated=float(2 * c), squared=float(2 * c ** 2), exact=exact)


# =============================================================================
# PROJECTOR DIAGNOSTICS
# =============================================================================

def leading_projector(x: DataMatrix, method: str = "mgs") -> ProjectionMatrix:
    """P(p-1): complement of the first p - 1 rows (P(0) = I when p = 1)"""
    return projection_complement(x.entries[: x.p - 1], n=x.n, method=method)


def pii_limit_check(x: DataMatrix, method: str = "mgs") -> PiiDiagnostics:
    """
    ((1/n) sum p_ii^2, (1/n) sum (1 - p_ii - y)^2) for P = P(p-1), y = (p-1)/n.

    The second value tends to 0, hence the first tends to (1 - y)^2.
    """
    return pii_diagnostics(leading_projector(x, method).diagonal(), x.p, x.n)


def pii_diagnostics(diag: np.ndarray, p: int, n: int) -> PiiDiagnostics:
    """pii_limit_check on an already computed P(p-1) diagonal"""
    diag = np.asarray(diag, dtype=float)
    y = (p - 1) / n
    return PiiDiagnostics(
        pii_sq_mean=float(np.mean(diag ** 2)),
        deviation_mean=float(np.mean((1.0 - diag - y) ** 2)),
    )
