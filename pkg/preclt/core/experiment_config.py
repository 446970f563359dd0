"""
Experiment configuration.

One experiment is a frozen ExperimentConfig loaded from a JSON file with
command-line overrides on top. The resolved config is echoed into every
summary, and its SHA-256 over canonical JSON is the provenance hash.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from ..services.precision import PopulationCovariance
from ..services.randgen import UINT64_MAX, DistributionKind, DistributionSpec, make_distribution
from .config import config
from .exceptions import ConfigParseError, ConfigValidationError, PrecltError, ReportIOError

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    SINGLE_ENTRY = "single_entry"
    PAIR = "pair"
    CHI_SQUARE_LAW = "chi_square_law"
    WISHART_COV = "wishart_cov"
    SCALE_SEPARATION = "scale_separation"
    IDENTITY_AUDIT = "identity_audit"
    SWEEP = "sweep"
    CRAMER_NORM = "cramer_norm"
    RHO_CONCENTRATION = "rho_concentration"


class Normalizer(str, Enum):
    RHO_LIMIT = "rho_limit"
    RHO_N = "rho_n"


class SigmaKind(str, Enum):
    IDENTITY = "identity"
    DIAGONAL = "diagonal"
    AR1 = "ar1"
    EXPLICIT = "explicit"


# Modes with one (p, n) per run; the conditioning guard applies to them
FIXED_DIM_MODES = (
    Mode.SINGLE_ENTRY, Mode.PAIR, Mode.CHI_SQUARE_LAW, Mode.WISHART_COV,
    Mode.CRAMER_NORM, Mode.RHO_CONCENTRATION,
)
# Modes that walk a ladder of n at fixed y
LADDER_MODES = (Mode.SCALE_SEPARATION, Mode.SWEEP)
# Modes whose samples are written per replicate and can be re-summarized
SAMPLE_MODES = (Mode.SINGLE_ENTRY, Mode.PAIR, Mode.CHI_SQUARE_LAW, Mode.WISHART_COV)

KNOWN_KEYS = {
    "mode", "distribution", "sigma", "p", "n", "q_indices", "replicates",
    "master_seed", "normalizer", "qr_method", "audit_every", "n_ladder", "y",
    "y_values", "distributions", "allow_low_dof", "instances", "output_dir",
}
KEY_ALIASES = {"M": "replicates", "seed": "master_seed", "q": "q_indices", "dist": "distribution"}

# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class SigmaSpec:
    """
    Population covariance menu.

    identity; diagonal (params: values, default (1..p)/p); ar1 (params: r,
    Sigma_ij = r^|i-j|); explicit (params: matrix, a p x p nested list).
    """
    kind: SigmaKind = SigmaKind.IDENTITY
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_diagonal(self) -> bool:
        return self.kind in (SigmaKind.IDENTITY, SigmaKind.DIAGONAL)

    def build(self, p: int) -> PopulationCovariance:
        if self.kind is SigmaKind.IDENTITY:
            return PopulationCovariance.identity(p)
        if self.kind is SigmaKind.DIAGONAL:
            values = self.params.get("values")
            if values is None:
                values = np.arange(1, p + 1, dtype=float) / p
            if len(values) != p:
                raise ConfigValidationError(f"Diagonal sigma has {len(values)} values but p={p}")
            return PopulationCovariance.diagonal(values)
        if self.kind is SigmaKind.AR1:
            return PopulationCovariance.ar1(p, float(self.params["r"]))
        matrix = np.asarray(self.params["matrix"], dtype=float)
        if matrix.shape != (p, p):
            raise ConfigValidationError(f"Explicit sigma has shape {matrix.shape}, expected ({p}, {p})")
        return PopulationCovariance.general(matrix)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "params": dict(sorted(self.params.items()))}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Fully resolved experiment.

    p and n are None only for ladder modes (scale_separation, sweep), which
    derive p = round(y * n) per rung, and for identity_audit.
    """
    mode: Mode
    distribution: DistributionSpec
    sigma: SigmaSpec
    p: Optional[int]
    n: Optional[int]
    q_indices: Tuple[int, ...]
    replicates: int
    master_seed: int
    normalizer: Normalizer = Normalizer.RHO_LIMIT
    qr_method: str = "mgs"
    audit_every: int = 1
    n_ladder: Tuple[int, ...] = ()
    aspect_ratio: Optional[float] = None
    y_values: Tuple[float, ...] = ()
    distributions: Tuple[str, ...] = ()
    allow_low_dof: bool = False
    instances: int = 200
    output_dir: Path = field(default=Path("results"), compare=False)

    @property
    def y(self) -> float:
        """Aspect ratio: the configured y, or p/n"""
        if self.aspect_ratio is not None:
            return self.aspect_ratio
        if self.p is None or self.n is None:
            return 0.0
        return self.p / self.n

    @property
    def nu4(self) -> float:
        return self.distribution.nu4

    def population_covariance(self) -> PopulationCovariance:
        return self.sigma.build(self.p)

    def to_dict(self) -> Dict[str, Any]:
        """Canonical, JSON-ready form; output paths are not part of the experiment"""
        return {
            "mode": self.mode.value,
            "distribution": self.distribution.to_dict(),
            "sigma": self.sigma.to_dict(),
            "p": self.p,
            "n": self.n,
            "q_indices": list(self.q_indices),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "normalizer": self.normalizer.value,
            "qr_method": self.qr_method,
            "audit_every": self.audit_every,
            "n_ladder": list(self.n_ladder),
            "y": self.aspect_ratio,
            "y_values": list(self.y_values),
            "distributions": list(self.distributions),
            "allow_low_dof": self.allow_low_dof,
            "instances": self.instances,
        }

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def derive(self, **changes: Any) -> "ExperimentConfig":
        """A validated copy with some keys changed (e.g. one sweep grid point)"""
        raw = self.to_dict()
        raw["output_dir"] = str(self.output_dir)
        if "distribution" in changes or "p" in changes:
            raw.pop("q_indices")
        if "replicates" in changes:
            raw.pop("audit_every")
        raw.update(changes)
        return config_from_dict(raw)


# =============================================================================
# PARSING AND VALIDATION
# =============================================================================

def _fail(message: str) -> ConfigValidationError:
    return ConfigValidationError(message)


def _as_int(raw: Mapping[str, Any], key: str, default: Optional[int] = None) -> Optional[int]:
    value = raw.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise _fail(f"'{key}' must be an integer, got {value!r}")
    try:
        as_float = float(value)
    except ValueError:
        raise _fail(f"'{key}' must be an integer, got {value!r}")
    if not math.isfinite(as_float) or as_float != int(as_float):
        raise _fail(f"'{key}' must be an integer, got {value!r}")
    return int(value) if not isinstance(value, str) else int(as_float)


def _as_list(value: Any) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _parse_distribution(value: Any) -> DistributionSpec:
    if isinstance(value, str):
        kind, params = value, {}
    elif isinstance(value, Mapping):
        kind, params = value.get("kind"), value.get("params") or {}
    else:
        raise _fail(f"'distribution' must be a name or {{kind, params}}, got {value!r}")
    try:
        return make_distribution(kind, params)
    except PrecltError as e:
        raise _fail(f"Invalid distribution: {e}")


def _parse_sigma(value: Any) -> SigmaSpec:
    if value is None:
        return SigmaSpec()
    if isinstance(value, str):
        kind, params = value, {}
    elif isinstance(value, Mapping):
        kind, params = value.get("kind", "identity"), dict(value.get("params") or {})
    else:
        raise _fail(f"'sigma' must be a name or {{kind, params}}, got {value!r}")
    try:
        sigma_kind = SigmaKind(kind)
    except ValueError:
        allowed = ", ".join(k.value for k in SigmaKind)
        raise _fail(f"Unknown sigma kind {kind!r}. Allowed: {allowed}")
    if sigma_kind is SigmaKind.AR1:
        if "r" not in params:
            raise _fail("ar1 sigma needs parameter 'r'")
        r = float(params["r"])
        if not -1.0 < r < 1.0:
            raise _fail(f"ar1 parameter must lie in (-1, 1), got {r}")
        params["r"] = r
    if sigma_kind is SigmaKind.EXPLICIT and "matrix" not in params:
        raise _fail("explicit sigma needs parameter 'matrix'")
    if sigma_kind is SigmaKind.DIAGONAL and "values" in params:
        params["values"] = [float(v) for v in params["values"]]
    return SigmaSpec(sigma_kind, params)


def _default_q(mode: Mode, p: Optional[int]) -> Tuple[int, ...]:
    if p is None:
        return ()
    if mode is Mode.PAIR:
        return (p, p - 1)
    if mode is Mode.WISHART_COV:
        return (1, 2)
    return (p,)


def _check_dims(p: int, n: int, allow_low_dof: bool, where: str = "") -> None:
    if p < 1:
        raise _fail(f"p must be at least 1{where}, got p={p}")
    if p >= n:
        raise _fail(f"p < n required{where}, got p={p}, n={n}")
    if not allow_low_dof and n - p < config.min_dof:
        raise _fail(
            f"n - p = {n - p} is below the conditioning guard {config.min_dof}{where} "
            f"(set allow_low_dof or PRECLT_MIN_DOF)"
        )


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    """
    Validate a raw mapping and fill defaults.

    Raises:
        ConfigValidationError: naming the violated invariant
    """
    raw = {KEY_ALIASES.get(k, k): v for k, v in raw.items()}
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise _fail(f"Unknown config keys: {', '.join(unknown)}")

    try:
        mode = Mode(raw.get("mode", Mode.SINGLE_ENTRY.value))
    except ValueError:
        raise _fail(f"Unknown mode {raw.get('mode')!r}. Allowed: {', '.join(m.value for m in Mode)}")
    try:
        normalizer = Normalizer(raw.get("normalizer") or Normalizer.RHO_LIMIT.value)
    except ValueError:
        raise _fail(f"Unknown normalizer {raw.get('normalizer')!r}")

    distribution = _parse_distribution(raw.get("distribution", "gaussian"))
    sigma = _parse_sigma(raw.get("sigma"))
    qr_method = raw.get("qr_method") or "mgs"
    if qr_method not in ("mgs", "cgs2"):
        raise _fail(f"qr_method must be 'mgs' or 'cgs2', got {qr_method!r}")

    replicates = _as_int(raw, "replicates", config.default_replicates)
    if replicates < 0:
        raise _fail(f"replicates must be non-negative, got {replicates}")
    master_seed = _as_int(raw, "master_seed", 0)
    if not 0 <= master_seed <= UINT64_MAX:
        raise _fail(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    audit_every = _as_int(raw, "audit_every", max(1, replicates // config.audit_fraction))
    if audit_every < 1:
        raise _fail(f"audit_every must be at least 1, got {audit_every}")
    allow_low_dof = bool(raw.get("allow_low_dof", False))
    instances = _as_int(raw, "instances", 200)
    if instances < 1:
        raise _fail(f"instances must be at least 1, got {instances}")

    p = _as_int(raw, "p")
    n = _as_int(raw, "n")
    aspect_ratio = raw.get("y")
    if aspect_ratio is not None:
        aspect_ratio = float(aspect_ratio)
        if not 0.0 <= aspect_ratio < 1.0:
            raise _fail(f"y must lie in [0, 1), got {aspect_ratio}")
    n_ladder = tuple(int(v) for v in _as_list(raw.get("n_ladder")))
    y_values = tuple(float(v) for v in _as_list(raw.get("y_values")))
    distributions = tuple(str(v) for v in _as_list(raw.get("distributions")))

    if mode in FIXED_DIM_MODES:
        if p is None or n is None:
            raise _fail(f"{mode.value} needs both p and n")
        _check_dims(p, n, allow_low_dof)
    elif p is not None and n is not None and p >= n:
        raise _fail(f"p < n required, got p={p}, n={n}")

    if mode is Mode.PAIR and p < 2:
        raise _fail(f"pair mode needs p >= 2, got p={p}")
    if mode in (Mode.WISHART_COV, Mode.CRAMER_NORM) and distribution.kind is not DistributionKind.GAUSSIAN:
        raise _fail(f"{mode.value} requires gaussian data, got {distribution.kind.value}")
    if mode is Mode.CHI_SQUARE_LAW and sigma.kind is not SigmaKind.IDENTITY:
        raise _fail("chi_square_law works on X itself and requires identity sigma")
    if normalizer is Normalizer.RHO_N and mode in (Mode.CHI_SQUARE_LAW, Mode.WISHART_COV):
        raise _fail(f"the rho_n normalizer applies to single_entry, pair and sweep, not {mode.value}")
    if mode is Mode.SCALE_SEPARATION and not sigma.is_diagonal:
        raise _fail("scale_separation requires a diagonal sigma")

    if mode in LADDER_MODES:
        if not n_ladder:
            n_ladder = (200, 400, 800)
        if mode is Mode.SCALE_SEPARATION and aspect_ratio is None:
            aspect_ratio = 0.5
        if mode is Mode.SWEEP:
            if not y_values:
                y_values = (aspect_ratio,) if aspect_ratio is not None else (0.25,)
            if not distributions:
                distributions = (distribution.kind.value,)
            for name in distributions:
                _parse_distribution(name)
        for rung_n in n_ladder:
            for rung_y in (y_values if mode is Mode.SWEEP else (aspect_ratio,)):
                _check_dims(max(1, round(rung_y * rung_n)), rung_n, allow_low_dof,
                            where=f" at n={rung_n}, y={rung_y}")

    q_raw = _as_list(raw.get("q_indices"))
    q_indices = tuple(int(v) for v in q_raw) if q_raw else _default_q(mode, p)
    if p is not None:
        for q in q_indices:
            if not 1 <= q <= p:
                raise _fail(f"q index {q} outside 1..{p}")
    if mode is Mode.WISHART_COV:
        if len(q_indices) != 2 or q_indices[0] == q_indices[1]:
            raise _fail(f"wishart_cov needs two distinct indices q1 != q2, got {list(q_indices)}")
    if mode is Mode.PAIR and sorted(q_indices) != [p - 1, p]:
        raise _fail(f"pair mode computes q = p and p - 1 only, got {list(q_indices)}")
    if mode is Mode.CHI_SQUARE_LAW and q_indices != (p,):
        raise _fail("chi_square_law is defined for q = p only")

    if p is not None and sigma.kind is not SigmaKind.IDENTITY:
        try:
            sigma.build(p)
        except PrecltError as e:
            raise _fail(f"Invalid sigma: {e}")

    return ExperimentConfig(
        mode=mode,
        distribution=distribution,
        sigma=sigma,
        p=p,
        n=n,
        q_indices=q_indices,
        replicates=replicates,
        master_seed=master_seed,
        normalizer=normalizer,
        qr_method=qr_method,
        audit_every=audit_every,
        n_ladder=n_ladder,
        aspect_ratio=aspect_ratio,
        y_values=y_values,
        distributions=distributions,
        allow_low_dof=allow_low_dof,
        instances=instances,
        output_dir=Path(raw.get("output_dir") or config.output_dir),
    )


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Parse a JSON config file.

    Raises:
        ReportIOError: file cannot be read
        ConfigParseError: invalid JSON, with line and column
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Cannot read config file {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        line = text.splitlines()[e.lineno - 1] if e.lineno - 1 < len(text.splitlines()) else ""
        raise ConfigParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}\n    {line}")
    if not isinstance(data, dict):
        raise ConfigParseError(f"{path}: top level must be a JSON object")
    return data


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Load, merge and validate an experiment config.

    Args:
        path: JSON file, optional
        overrides: flag values; None entries are ignored, others win over the file

    Returns:
        Validated ExperimentConfig with defaults filled

    Raises:
        ConfigParseError, ConfigValidationError, ReportIOError
    """
    raw: Dict[str, Any] = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[KEY_ALIASES.get(key, key)] = value
    resolved = config_from_dict(raw)
    logger.debug(f"Resolved config {resolved.config_hash[:12]} for mode {resolved.mode.value}")
    return resolved
