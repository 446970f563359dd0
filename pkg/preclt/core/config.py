"""
Process-level configuration.

Settings that belong to the machine running the laboratory rather than to one
experiment:
- Worker count for the Monte Carlo engine
- Output directory and log level
- Numerical tolerances shared by the linear algebra and precision services
"""
import logging
import os
from pathlib import Path
from typing import Optional

# Load environment variables from .env file in development
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    # dotenv not installed, plain environment variables still work
    pass


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")


class Config:
    """Laboratory configuration with environment overrides"""

    def __init__(self):
        # Core settings
        self.log_level = os.getenv("PRECLT_LOG_LEVEL", "INFO").upper()
        self.output_dir = Path(os.getenv("PRECLT_OUTPUT_DIR", "results"))

        # PRECLT_WORKERS wins over --workers when set
        self.workers_override: Optional[int] = None
        if os.getenv("PRECLT_WORKERS", "").strip():
            self.workers_override = _env_int("PRECLT_WORKERS", 1)
            if self.workers_override < 1:
                raise ValueError("PRECLT_WORKERS must be at least 1")

        # Dense n x n projectors are only materialised up to this size
        self.dense_limit = _env_int("PRECLT_DENSE_LIMIT", 4096)

        # Conditioning guard: n - p below this is rejected unless overridden
        self.min_dof = _env_int("PRECLT_MIN_DOF", 5)

        # Numerical tolerances
        self.projector_atol = 1e-10
        self.cross_method_rtol = 1e-8
        self.audit_rtol = 1e-6
        self.rank_rtol = 1e-12
        self.qr_cross_check_rtol = 1e-6
        self.symmetry_rtol = 1e-10

        # Monte Carlo defaults
        self.default_replicates = 10000
        self.audit_fraction = 100  # audit every max(1, M // audit_fraction) replicates

    def resolve_workers(self, requested: Optional[int] = None) -> int:
        """Worker count: environment override, then the request, then CPU count"""
        if self.workers_override is not None:
            return self.workers_override
        if requested is not None and requested >= 1:
            return requested
        return os.cpu_count() or 1


# Global configuration instance
config = Config()


def configure_logging(level: Optional[str] = None) -> None:
    """Root logger setup shared by main.py and `python -m preclt`"""
    logging.basicConfig(
        level=getattr(logging, (level or config.log_level), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler()]
    )
