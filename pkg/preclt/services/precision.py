"""
Precision Diagonal Service

Diagonal entries of the sample precision matrix along every algebraically
equivalent path:
- direct: triangular inverse of the Cholesky factor
- Cramer: ratio of the determinants of the minor and the full matrix
- quadratic form: n / (b_q' P b_q) with P the complement of the other rows
- pair: both trailing entries from one shared projector P(p-2)
- product chain: r_qq^2 times the ratio of full and minor QR diagonals
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from ..core.config import config
from ..core.exceptions import (
    DegenerateFormError,
    DimensionError,
    NotPositiveDefiniteError,
    PathDisagreementError,
)
from .linalg import (
    ProjectionMatrix,
    cholesky_lower,
    log_det_psd,
    projection_complement,
    qr_factors,
    rank_one_projector,
    residual_quadform,
)
from .randgen import DataMatrix

logger = logging.getLogger(__name__)


class CovarianceVariant(str, Enum):
    DIAGONAL = "diagonal"
    GENERAL_SPD = "general_spd"


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True, eq=False)
class PopulationCovariance:
    """Sigma with its symmetric square root, inverse and inverse diagonal"""
    variant: CovarianceVariant
    matrix: np.ndarray = field(repr=False)
    sqrt: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def inverse_diag(self) -> np.ndarray:
        """(Sigma^{-1})_qq for q = 1..p"""
        return np.diag(self.inverse).copy()

    @property
    def is_identity(self) -> bool:
        return self.variant is CovarianceVariant.DIAGONAL and bool(np.all(np.diag(self.matrix) == 1.0))

    @classmethod
    def identity(cls, p: int) -> "PopulationCovariance":
        return cls.diagonal(np.ones(p))

    @classmethod
    def diagonal(cls, values: Sequence[float]) -> "PopulationCovariance":
        d = np.asarray(values, dtype=float)
        if d.ndim != 1 or d.size == 0:
            raise DimensionError("Diagonal covariance needs a non-empty vector of variances")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise NotPositiveDefiniteError("Diagonal covariance entries must be positive")
        return cls(CovarianceVariant.DIAGONAL, np.diag(d), np.diag(np.sqrt(d)), np.diag(1.0 / d))

    @classmethod
    def general(cls, matrix: np.ndarray) -> "PopulationCovariance":
        """General SPD Sigma; validated by Cholesky, square root by eigendecomposition"""
        m = np.asarray(matrix, dtype=float)
        lower = cholesky_lower(m)
        m = 0.5 * (m + m.T)
        eigenvalues, vectors = la.eigh(m)
        if np.any(eigenvalues <= 0):
            raise NotPositiveDefiniteError("Covariance has a non-positive eigenvalue")
        root = (vectors * np.sqrt(eigenvalues)) @ vectors.T
        root = 0.5 * (root + root.T)
        identity = np.eye(m.shape[0])
        inverse = la.cho_solve((lower, True), identity)
        inverse = 0.5 * (inverse + inverse.T)
        return cls(CovarianceVariant.GENERAL_SPD, m, root, inverse)

    @classmethod
    def ar1(cls, p: int, r: float) -> "PopulationCovariance":
        """Sigma_ij = r^|i-j|, SPD for |r| < 1"""
        if not -1.0 < r < 1.0:
            raise NotPositiveDefiniteError(f"ar1 parameter must lie in (-1, 1), got {r}")
        idx = np.arange(p)
        return cls.general(float(r) ** np.abs(idx[:, None] - idx[None, :]))

    def transform(self, x: DataMatrix) -> DataMatrix:
        """Y = Sigma^{1/2} X"""
        if self.p != x.p:
            raise DimensionError(f"Sigma is {self.p}x{self.p} but the data has p={x.p}")
        if self.variant is CovarianceVariant.DIAGONAL:
            return DataMatrix(np.sqrt(np.diag(self.matrix))[:, None] * x.entries)
        return DataMatrix(self.sqrt @ x.entries)


@dataclass(frozen=True, eq=False)
class SampleCovariance:
    """Sigma-hat = (1/n) Sigma^{1/2} X X' Sigma^{1/2}"""
    matrix: np.ndarray = field(repr=False)
    n: int
    source_hash: str

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


class PairEntries(NamedTuple):
    """(I-hat^{-1})_pp and (I-hat^{-1})_{p-1,p-1}"""
    last: float
    second_last: float


class PairProjectors(NamedTuple):
    p_pm2: ProjectionMatrix
    p_pm1: ProjectionMatrix
    q_p: ProjectionMatrix
    difference: ProjectionMatrix


class QuadformResult(NamedTuple):
    entry: float
    form: float
    projector: ProjectionMatrix


# =============================================================================
# SAMPLE COVARIANCE
# =============================================================================

def _data_hash(entries: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(entries).tobytes()).hexdigest()[:16]


def sample_covariance(x: DataMatrix, sigma: Optional[PopulationCovariance] = None) -> SampleCovariance:
    """
    Sigma-hat for data x and population covariance sigma (identity when None).

    Raises:
        DimensionError: sigma does not match p
    """
    if sigma is None:
        y = x.entries
    else:
        y = sigma.transform(x).entries
    s = (y @ y.T) / x.n
    s = 0.5 * (s + s.T)
    s.setflags(write=False)
    return SampleCovariance(s, x.n, _data_hash(x.entries))


def _check_index(q: int, p: int) -> None:
    if not 1 <= q <= p:
        raise DimensionError(f"Index q must be in 1..{p}, got {q}")


def _minor(m: np.ndarray, q: int) -> np.ndarray:
    return np.delete(np.delete(m, q - 1, axis=0), q - 1, axis=1)


# =============================================================================
# PRECISION PATHS
# =============================================================================

def precision_matrix_direct(s: SampleCovariance) -> np.ndarray:
    """Full inverse via Cholesky; oracle for the diagonal paths"""
    lower = cholesky_lower(s.matrix)
    inverse = la.cho_solve((lower, True), np.eye(s.p))
    return 0.5 * (inverse + inverse.T)


def precision_diag_direct(s: SampleCovariance) -> np.ndarray:
    """
    (Sigma-hat^{-1})_qq for q = 1..p.

    With S = LL', S^{-1} = L^{-T} L^{-1}, so the diagonal is the column sums
    of squares of L^{-1}.

    Raises:
        NotPositiveDefiniteError: s not PD
    """
    lower = cholesky_lower(s.matrix)
    lower_inv = la.solve_triangular(lower, np.eye(s.p), lower=True)
    return np.sum(lower_inv ** 2, axis=0)


def precision_diag_cramer(s: SampleCovariance, q: int) -> float:
    """(Sigma-hat^{-1})_qq = |minor_q| / |Sigma-hat|, in log space"""
    _check_index(q, s.p)
    return math.exp(log_det_psd(_minor(s.matrix, q)) - log_det_psd(s.matrix))


def quadform_entry(x: DataMatrix, q: int, method: str = "mgs") -> QuadformResult:
    """
    n / (b_q' P b_q) with P the complement projector of the other p - 1 rows.

    Rows q and p are swapped first, so the other rows keep the order they
    have after the swap and b_q plays the role of the last row.
    """
    _check_index(q, x.p)
    swapped = x.with_rows_swapped(q, x.p) if q != x.p else x
    others = swapped.entries[:-1]
    proj = projection_complement(others, n=x.n, method=method)
    b_q = swapped.entries[-1]
    form = residual_quadform(b_q, proj)
    if form <= config.rank_rtol * float(b_q @ b_q):
        raise DegenerateFormError(f"Quadratic form b_q'P b_q = {form:.3e} is degenerate")
    return QuadformResult(x.n / form, form, proj)


def precision_diag_quadform(x: DataMatrix, q: int, method: str = "mgs") -> float:
    """
    (I-hat^{-1})_qq = n / (b_q' P_{-q} b_q) for I-hat = XX'/n.

    Raises:
        DimensionError: q outside 1..p
        DegenerateFormError: the quadratic form underflows
    """
    return quadform_entry(x, q, method).entry


def _relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), np.finfo(float).tiny)


def pair_quadform_with_projectors(x: DataMatrix, method: str = "mgs") -> Tuple[PairEntries, PairProjectors]:
    """
    ((I-hat^{-1})_pp, (I-hat^{-1})_{p-1,p-1}) and the projectors behind them,
    all from one QR pass of X'.

    The second entry is evaluated twice: as b_{p-1}'(P(p-2) - Q(p))b_{p-1}
    and as r_pp^2 r_{p-1,p-1}^2 / (b_p' P(p-2) b_p); both must agree.

    Raises:
        DimensionError: p < 2
        DegenerateFormError: a quadratic form underflows
        PathDisagreementError: the two evaluations differ beyond tolerance
    """
    if x.p < 2:
        raise DimensionError(f"Pair quantities need p >= 2, got p={x.p}")
    p, n = x.p, x.n
    factors = qr_factors(x.entries.T, method)
    r_sq = factors.r_diag_sq()
    p_pm2 = ProjectionMatrix(factors.q_factor[:, : p - 2], complement=True)
    p_pm1 = ProjectionMatrix(factors.q_factor[:, : p - 1], complement=True)
    b_p = x.row(p)
    b_pm1 = x.row(p - 1)
    q_p = rank_one_projector(p_pm2, b_p)
    difference = p_pm2.minus(q_p)

    via_projector = residual_quadform(b_pm1, difference)
    via_triangular = r_sq[p - 1] * r_sq[p - 2] / residual_quadform(b_p, p_pm2)
    if _relative_gap(via_projector, via_triangular) > config.cross_method_rtol:
        raise PathDisagreementError(
            f"Pair representations disagree: {via_projector!r} vs {via_triangular!r}"
        )
    entries = PairEntries(n / r_sq[p - 1], n / via_projector)
    return entries, PairProjectors(p_pm2, p_pm1, q_p, difference)


def pair_projectors(x: DataMatrix, method: str = "mgs") -> PairProjectors:
    """P(p-2), P(p-1), Q(p) and P(p-2) - Q(p) for one data matrix"""
    return pair_quadform_with_projectors(x, method)[1]


def precision_pair_quadform(x: DataMatrix, method: str = "mgs") -> PairEntries:
    """((I-hat^{-1})_pp, (I-hat^{-1})_{p-1,p-1}) from one QR pass of X'"""
    return pair_quadform_with_projectors(x, method)[0]


def precision_diag_product_chain(x: DataMatrix, q: int, method: str = "mgs") -> float:
    """
    (I-hat^{-1})_qq from n (I-hat^{-1})_qq^{-1} = r_qq^2 prod_{i>q} r_ii^2 / r_{ii,q}^2.

    r_{ii,q} are the diagonal factors of X' with column q removed: for i > q
    the i-th row of X sits at position i-1 there, and its residual is taken
    against span{b_1..b_{i-1}} without b_q.
    """
    _check_index(q, x.p)
    full = qr_factors(x.entries.T, method).r_diag_sq()
    log_value = math.log(full[q - 1])
    if q < x.p:
        minor = qr_factors(x.without_row(q).T, method).r_diag_sq()
        log_value += float(np.sum(np.log(full[q:])) - np.sum(np.log(minor[q - 1:])))
    return x.n / math.exp(log_value)


def _log_dets(s: SampleCovariance, q: int):
    _check_index(q, s.p)
    return log_det_psd(s.matrix), log_det_psd(_minor(s.matrix, q))


def lss_difference(s: SampleCovariance, q: int, verify: bool = True) -> float:
    """
    log|minor_q| - log|Sigma-hat|, the difference of the log-determinant
    spectral statistics of Sigma-hat and its minor.

    With verify=True the value is checked against log((Sigma-hat^{-1})_qq)
    from the direct path.

    Raises:
        NotPositiveDefiniteError: s or its minor not PD
        PathDisagreementError: identity fails beyond tolerance
    """
    full, minor = _log_dets(s, q)
    value = minor - full
    if verify:
        direct = math.log(precision_diag_direct(s)[q - 1])
        if abs(value - direct) > config.cross_method_rtol * max(1.0, abs(direct)):
            raise PathDisagreementError(f"Log-determinant difference {value!r} != log precision {direct!r}")
    return value


def log_det_and_lss(s: SampleCovariance, q: int) -> Dict[str, float]:
    """log|Sigma-hat| and the log-determinant difference in one factorization pass"""
    full, minor = _log_dets(s, q)
    return {"log_det": full, "lss": minor - full}


def all_paths(x: DataMatrix, q: int, method: str = "mgs") -> Dict[str, float]:
    """(I-hat^{-1})_qq along every path available for q; used by the identity audit"""
    s = sample_covariance(x)
    values = {
        "direct": float(precision_diag_direct(s)[q - 1]),
        "cramer": precision_diag_cramer(s, q),
        "quadform": precision_diag_quadform(x, q, method),
        "product_chain": precision_diag_product_chain(x, q, method),
    }
    if x.p >= 2 and q in (x.p - 1, x.p):
        pair = precision_pair_quadform(x, method)
        values["pair"] = pair.last if q == x.p else pair.second_last
    return values


def max_relative_spread(values: List[float]) -> float:
    """Largest pairwise relative gap among path values"""
    return max((_relative_gap(a, b) for a in values for b in values), default=0.0)
