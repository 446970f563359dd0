"""
Linear Algebra Service

Exact computational identities behind the precision-matrix representations:
- Gram-Schmidt QR of X' (modified, and a reorthogonalized cross-check)
- Orthogonal-complement projectors P(q) and the rank-one projector Q(p)
- Residual quadratic forms b'Pb and log-determinants
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as la

from ..core.config import config
from ..core.exceptions import (
    DegenerateFormError,
    DimensionError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
)

logger = logging.getLogger(__name__)

QR_METHODS = ("mgs", "cgs2")

# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class QrFactors:
    """
    A = QR with Q (n x k) orthonormal columns e_1..e_k and R (k x k) upper
    triangular with r_ii > 0. residual_norms[j] is ||u_j|| before normalization.
    """
    q_factor: np.ndarray = field(repr=False)
    r_factor: np.ndarray = field(repr=False)
    residual_norms: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.q_factor.shape[0]

    @property
    def k(self) -> int:
        return self.q_factor.shape[1]

    def r_diag_sq(self) -> np.ndarray:
        """r_11^2 .. r_kk^2"""
        return np.diag(self.r_factor) ** 2


@dataclass(frozen=True)
class ProjectionMatrix:
    """
    Orthogonal projector stored through an orthonormal basis B (n x k).

    complement=True represents I - BB' (rank n - k), the form of P(q);
    complement=False represents BB' (rank k), the form of Q(p). The dense
    n x n matrix is built on demand.
    """
    basis: np.ndarray = field(repr=False)
    complement: bool = True

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        k = self.basis.shape[1]
        return self.n - k if self.complement else k

    def apply(self, v: np.ndarray) -> np.ndarray:
        """P v without forming P"""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionError(f"Vector length {v.shape[0]} does not match projector size {self.n}")
        if self.basis.shape[1] == 0:
            return v.copy() if self.complement else np.zeros_like(v)
        inside = self.basis @ (self.basis.T @ v)
        return v - inside if self.complement else inside

    def diagonal(self) -> np.ndarray:
        """Diagonal entries p_ii, from the basis row norms"""
        row_sq = np.sum(self.basis ** 2, axis=1)
        return 1.0 - row_sq if self.complement else row_sq

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.n > config.dense_limit:
            raise DimensionError(
                f"Dense projector of size {self.n} exceeds the limit {config.dense_limit} (PRECLT_DENSE_LIMIT)"
            )
        inside = self.basis @ self.basis.T
        dense = np.eye(self.n) - inside if self.complement else inside
        dense.setflags(write=False)
        return dense

    def trace(self) -> float:
        return float(np.sum(self.diagonal()))

    def minus(self, other: "ProjectionMatrix") -> "ProjectionMatrix":
        """
        self - other for a complement projector self and a range projector other
        whose range lies inside range(self); the result is again a complement
        projector, with the augmented basis.
        """
        if not self.complement or other.complement:
            raise DimensionError("minus() needs a complement projector minus a range projector")
        if other.n != self.n:
            raise DimensionError(f"Projector sizes differ: {self.n} vs {other.n}")
        leak = self.apply(other.basis) - other.basis if other.basis.shape[1] else np.zeros(1)
        if np.max(np.abs(leak)) > 1e-8:
            raise DegenerateFormError("Range of the subtracted projector is not contained in the complement")
        return ProjectionMatrix(np.hstack([self.basis, other.basis]), complement=True)


# =============================================================================
# QR DECOMPOSITION
# =============================================================================

def _as_columns(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"Expected a 2-dimensional matrix, got shape {a.shape}")
    n, k = a.shape
    if k > n:
        raise RankDeficiencyError(f"{k} columns in dimension {n} cannot be linearly independent")
    return a


def _check_residual(norm: float, column_norm: float, j: int) -> None:
    if column_norm == 0.0 or norm <= config.rank_rtol * column_norm:
        raise RankDeficiencyError(
            f"Column {j + 1} is linearly dependent on the previous columns "
            f"(residual {norm:.3e}, column norm {column_norm:.3e})"
        )


def qr_gram_schmidt(a: np.ndarray) -> QrFactors:
    """
    Modified Gram-Schmidt QR, left-looking and column by column.

    Column j only ever touches e_1..e_{j-1}, so the factors of the leading
    columns are bitwise independent of any columns that follow.

    Args:
        a: n x k matrix with linearly independent columns

    Returns:
        QrFactors with r_ii > 0

    Raises:
        RankDeficiencyError: when a residual norm underflows tolerance
    """
    a = _as_columns(a)
    n, k = a.shape
    q = np.zeros((n, k), order="F")
    r = np.zeros((k, k))
    residuals = np.zeros(k)

    for j in range(k):
        u = np.array(a[:, j], dtype=float)
        column_norm = float(np.linalg.norm(u))
        for i in range(j):
            e_i = q[:, i]
            r[i, j] = e_i @ u
            u -= r[i, j] * e_i
        norm = float(np.linalg.norm(u))
        _check_residual(norm, column_norm, j)
        residuals[j] = norm
        r[j, j] = norm
        q[:, j] = u / norm

    return QrFactors(np.ascontiguousarray(q), r, residuals)


def qr_reorthogonalized(a: np.ndarray) -> QrFactors:
    """
    Classical Gram-Schmidt with one reorthogonalization pass (CGS2).

    Vectorized over previous columns; used as the hardened cross-check of
    qr_gram_schmidt and as the fast path for large Monte Carlo runs.
    """
    a = _as_columns(a)
    n, k = a.shape
    q = np.zeros((n, k), order="F")
    r = np.zeros((k, k))
    residuals = np.zeros(k)

    for j in range(k):
        u = np.array(a[:, j], dtype=float)
        column_norm = float(np.linalg.norm(u))
        if j:
            basis = q[:, :j]
            h = basis.T @ u
            u -= basis @ h
            h2 = basis.T @ u
            u -= basis @ h2
            r[:j, j] = h + h2
        norm = float(np.linalg.norm(u))
        _check_residual(norm, column_norm, j)
        residuals[j] = norm
        r[j, j] = norm
        q[:, j] = u / norm

    return QrFactors(np.ascontiguousarray(q), r, residuals)


def qr_factors(a: np.ndarray, method: str = "mgs") -> QrFactors:
    if method == "mgs":
        return qr_gram_schmidt(a)
    if method == "cgs2":
        return qr_reorthogonalized(a)
    raise DimensionError(f"Unknown QR method {method!r}. Allowed: {', '.join(QR_METHODS)}")


@dataclass(frozen=True)
class QrCrossCheck:
    primary: QrFactors
    hardened: QrFactors
    max_rel_diff: float
    ill_conditioned: bool


def qr_cross_check(a: np.ndarray) -> QrCrossCheck:
    """Run both QR paths; R factors differing beyond 1e-6 relative flag the instance"""
    primary = qr_gram_schmidt(a)
    hardened = qr_reorthogonalized(a)
    scale = max(float(np.max(np.abs(hardened.r_factor))), np.finfo(float).tiny)
    max_rel_diff = float(np.max(np.abs(primary.r_factor - hardened.r_factor)) / scale)
    ill_conditioned = max_rel_diff > config.qr_cross_check_rtol
    if ill_conditioned:
        logger.warning(f"QR paths disagree by {max_rel_diff:.3e} (relative); instance flagged ill-conditioned")
    return QrCrossCheck(primary, hardened, max_rel_diff, ill_conditioned)


# =============================================================================
# PROJECTORS AND QUADRATIC FORMS
# =============================================================================

def projection_complement(rows: np.ndarray, n: Optional[int] = None, method: str = "mgs") -> ProjectionMatrix:
    """
    P(q) = I - X'(XX')^{-1}X for the q x n row block X, built as I - Q1 Q1'
    from the Gram-Schmidt basis of the rows; XX' is never inverted.

    Args:
        rows: q x n matrix (q may be 0, giving P(0) = I; pass n then)
        n: ambient dimension, required only when rows is empty
        method: "mgs" or "cgs2"

    Raises:
        RankDeficiencyError: rows not of full rank
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[np.newaxis, :]
    if rows.size == 0:
        size = n if n is not None else (rows.shape[1] if rows.ndim == 2 else 0)
        if not size:
            raise DimensionError("projection_complement of an empty block needs the dimension n")
        return ProjectionMatrix(np.zeros((size, 0)), complement=True)
    q, width = rows.shape
    if q >= width:
        raise DimensionError(f"Need fewer rows than columns (q < n), got q={q}, n={width}")
    factors = qr_factors(rows.T, method)
    return ProjectionMatrix(factors.q_factor, complement=True)


def residual_quadform(b: np.ndarray, proj: ProjectionMatrix) -> float:
    """
    b'Pb, evaluated as ||Pb||^2.

    Raises:
        DimensionError: length of b does not match the projector
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.shape[0] != proj.n:
        raise DimensionError(f"Vector of shape {b.shape} does not match projector size {proj.n}")
    pb = proj.apply(b)
    return float(pb @ pb)


def rank_one_projector(p_pm2: ProjectionMatrix, b_p: np.ndarray) -> ProjectionMatrix:
    """
    Q(p) = P b b' P / (b'P b) for P = P(p-2): the projector onto the direction
    P b_p, which satisfies P Q = Q P = Q.

    Raises:
        DegenerateFormError: b'Pb underflows tolerance
    """
    b_p = np.asarray(b_p, dtype=float)
    u = p_pm2.apply(b_p)
    form = float(u @ u)
    scale = float(b_p @ b_p)
    if scale == 0.0 or form <= config.rank_rtol * scale:
        raise DegenerateFormError(f"Quadratic form b'P(p-2)b = {form:.3e} is degenerate")
    direction = u / np.sqrt(form)
    return ProjectionMatrix(direction[:, np.newaxis], complement=False)


# =============================================================================
# DETERMINANTS
# =============================================================================

def cholesky_lower(s: np.ndarray) -> np.ndarray:
    """
    Lower Cholesky factor of a symmetric positive definite matrix.

    Raises:
        DimensionError: non-square input
        NotPositiveDefiniteError: asymmetric input or a non-positive pivot
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {s.shape}")
    scale = max(float(np.max(np.abs(s))), 1.0) if s.size else 1.0
    if s.size and np.max(np.abs(s - s.T)) > config.symmetry_rtol * scale:
        raise NotPositiveDefiniteError("Matrix is not symmetric")
    try:
        lower = la.cholesky(s, lower=True)
    except la.LinAlgError as e:
        raise NotPositiveDefiniteError(f"Matrix is not positive definite: {e}")
    if np.any(np.diag(lower) <= 0):
        raise NotPositiveDefiniteError("Cholesky pivot is not positive")
    return lower


def log_det_psd(s: np.ndarray) -> float:
    """
    log|S| = 2 sum log l_ii from the Cholesky factor S = LL'.

    The empty (0 x 0) matrix has log-determinant 0.
    """
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        return 0.0
    lower = cholesky_lower(s)
    return float(2.0 * np.sum(np.log(np.diag(lower))))
