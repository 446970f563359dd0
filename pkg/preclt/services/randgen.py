"""
Random Data Generation Service

Reproducible i.i.d. data matrices from continuous, standardized laws with an
analytically known fourth moment. Every replicate draws from its own
counter-based substream keyed by (master_seed, stream_id), so results do not
depend on worker count or execution order.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional

import numpy as np

from ..core.exceptions import DimensionError, DistributionError

logger = logging.getLogger(__name__)

UINT64_MAX = 2**64 - 1


class DistributionKind(str, Enum):
    """Menu of entry laws, spanning nu4 < 3, = 3 and > 3"""
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    STUDENT_T = "student_t"
    SHIFTED_EXPONENTIAL = "shifted_exponential"


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class DistributionSpec:
    """
    Standardized entry law.

    Raw draws are mapped through the stored affine map (raw - loc) / scale,
    which gives mean 0 and variance 1 exactly; nu4 is the analytic E[x^4].
    """
    kind: DistributionKind
    params: Dict[str, float]
    nu4: float
    loc: float
    scale: float

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.loc) / self.scale

    def to_dict(self) -> Dict[str, object]:
        return {"kind": self.kind.value, "params": dict(sorted(self.params.items()))}


@dataclass(frozen=True)
class SeedSpec:
    """Substream key: (master_seed, stream_id) with stream_id the replicate index"""
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise DimensionError(f"{name} must be an integer, got {value!r}")
            if value < 0 or value > UINT64_MAX:
                raise DimensionError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(self.master_seed), int(self.stream_id)])

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())

    def generators(self, count: int) -> List[np.random.Generator]:
        """Independent child generators for replicates that need several matrices"""
        return [np.random.default_rng(child) for child in self.seed_sequence().spawn(count)]


@dataclass(frozen=True)
class DataMatrix:
    """
    The p x n data matrix X.

    Rows are b_1..b_p (length n), columns are x_1..x_n (length p). Indices in
    the accessors are 1-based to match the row/column labels used throughout.
    """
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2:
            raise DimensionError(f"Data matrix must be 2-dimensional, got shape {entries.shape}")
        p, n = entries.shape
        if p < 1:
            raise DimensionError("Data matrix needs at least one row (p >= 1)")
        if p >= n:
            raise DimensionError(f"p < n required, got p={p}, n={n}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def row(self, i: int) -> np.ndarray:
        """Row b_i as an n-vector"""
        if not 1 <= i <= self.p:
            raise DimensionError(f"Row index must be in 1..{self.p}, got {i}")
        return self.entries[i - 1]

    def column(self, j: int) -> np.ndarray:
        """Column x_j as a p-vector"""
        if not 1 <= j <= self.n:
            raise DimensionError(f"Column index must be in 1..{self.n}, got {j}")
        return self.entries[:, j - 1]

    def with_rows_swapped(self, i: int, j: int) -> "DataMatrix":
        if not (1 <= i <= self.p and 1 <= j <= self.p):
            raise DimensionError(f"Row indices must be in 1..{self.p}, got {i}, {j}")
        order = np.arange(self.p)
        order[[i - 1, j - 1]] = order[[j - 1, i - 1]]
        return DataMatrix(self.entries[order])

    def without_row(self, i: int) -> np.ndarray:
        """Rows other than b_i, in original order, as a (p-1) x n array"""
        if not 1 <= i <= self.p:
            raise DimensionError(f"Row index must be in 1..{self.p}, got {i}")
        return np.delete(self.entries, i - 1, axis=0)


# =============================================================================
# OPERATIONS
# =============================================================================

def _positive(params: Mapping[str, float], name: str, default: float) -> float:
    value = float(params.get(name, default))
    if not math.isfinite(value) or value <= 0:
        raise DistributionError(f"Parameter '{name}' must be positive and finite, got {value}")
    return value


def make_distribution(kind, params: Optional[Mapping[str, float]] = None) -> DistributionSpec:
    """
    Build a standardized distribution with its exact fourth moment.

    Args:
        kind: DistributionKind or its lowercase name
        params: kind-specific parameters
            uniform: half_width (raw support [-a, a], default sqrt(3))
            student_t: df (> 4, default 8)
            shifted_exponential: rate (default 1)

    Returns:
        DistributionSpec with mean 0, variance 1 and analytic nu4

    Raises:
        DistributionError: unknown kind or invalid parameters
    """
    try:
        kind = DistributionKind(kind)
    except ValueError:
        allowed = ", ".join(k.value for k in DistributionKind)
        raise DistributionError(f"Unknown distribution kind {kind!r}. Allowed kinds: {allowed}")

    params = dict(params or {})

    if kind is DistributionKind.GAUSSIAN:
        unknown = set(params)
        if unknown:
            raise DistributionError(f"gaussian takes no parameters, got {sorted(unknown)}")
        return DistributionSpec(kind, {}, nu4=3.0, loc=0.0, scale=1.0)

    if kind is DistributionKind.UNIFORM:
        half_width = _positive(params, "half_width", math.sqrt(3.0))
        return DistributionSpec(kind, {"half_width": half_width}, nu4=9.0 / 5.0,
                                loc=0.0, scale=half_width / math.sqrt(3.0))

    if kind is DistributionKind.STUDENT_T:
        df = float(params.get("df", 8.0))
        if not math.isfinite(df) or df <= 4:
            raise DistributionError(f"student_t needs df > 4 for a finite fourth moment, got df={df}")
        return DistributionSpec(kind, {"df": df}, nu4=3.0 * (df - 2.0) / (df - 4.0),
                                loc=0.0, scale=math.sqrt(df / (df - 2.0)))

    # shifted exponential: Exp(rate) - 1/rate, rescaled, i.e. Exp(1) - 1
    rate = _positive(params, "rate", 1.0)
    return DistributionSpec(kind, {"rate": rate}, nu4=9.0, loc=1.0 / rate, scale=1.0 / rate)


def draw_standardized(dist: DistributionSpec, rng: np.random.Generator, size) -> np.ndarray:
    """Draw i.i.d. standardized entries from dist using rng"""
    if dist.kind is DistributionKind.GAUSSIAN:
        raw = rng.standard_normal(size)
    elif dist.kind is DistributionKind.UNIFORM:
        a = dist.params["half_width"]
        raw = rng.uniform(-a, a, size)
    elif dist.kind is DistributionKind.STUDENT_T:
        raw = rng.standard_t(dist.params["df"], size)
    else:
        raw = rng.exponential(1.0 / dist.params["rate"], size)
    return dist.standardize(raw)


def sample_data_matrix(dist: DistributionSpec, p: int, n: int, seed: SeedSpec,
                       rng: Optional[np.random.Generator] = None) -> DataMatrix:
    """
    Sample a p x n matrix of i.i.d. standardized draws.

    Args:
        dist: entry law
        p, n: dimensions, 1 <= p < n
        seed: substream key; identical keys give bit-identical matrices
        rng: explicit generator (a child of seed), used when one replicate
            needs several independent matrices

    Raises:
        DimensionError: p >= n or p < 1
    """
    if p < 1 or p >= n:
        raise DimensionError(f"p < n required with p >= 1, got p={p}, n={n}")
    generator = rng if rng is not None else seed.generator()
    return DataMatrix(draw_standardized(dist, generator, (p, n)))


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed for a sub-experiment (sweep grid point, ladder rung)"""
    sequence = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
