"""
Exception handling for the laboratory.

Provides the exception hierarchy, structured error payloads and the mapping
from failures to CLI exit codes.
"""
import logging
from typing import Any, Dict

logger = logging.getLogger(__name__)

# =============================================================================
# CUSTOM EXCEPTION CLASSES
# =============================================================================

class PrecltError(Exception):
    """Base exception for all laboratory errors"""
    pass

class DistributionError(PrecltError):
    """Raised for invalid distribution kinds or parameters"""
    pass

class DimensionError(PrecltError):
    """Raised when shapes, sizes or indices are inconsistent"""
    pass

class DomainError(PrecltError):
    """Raised when a formula is evaluated outside its domain"""
    pass

class LinalgError(PrecltError):
    """Base exception for numerical linear algebra failures"""
    pass

class RankDeficiencyError(LinalgError):
    """Raised when a Gram-Schmidt residual norm underflows tolerance"""
    pass

class NotPositiveDefiniteError(LinalgError):
    """Raised when a factorization pivot is not positive"""
    pass

class DegenerateFormError(LinalgError):
    """Raised when a quadratic form b'Pb underflows tolerance"""
    pass

class DegenerateInputError(PrecltError):
    """Raised when a statistic is requested on degenerate samples"""
    pass

class AuditFailureError(PrecltError):
    """Raised when two computational paths disagree beyond tolerance"""
    pass

class PathDisagreementError(AuditFailureError):
    """Raised when two exact identities evaluated on one instance disagree"""
    pass

class ConfigError(PrecltError):
    """Base exception for experiment configuration errors"""
    pass

class ConfigParseError(ConfigError):
    """Raised when a config file cannot be parsed"""
    pass

class ConfigValidationError(ConfigError):
    """Raised when a config violates an invariant"""
    pass

class AcceptanceFailure(PrecltError):
    """Raised when the verification suite has failing verdicts"""
    pass

class ReportIOError(PrecltError):
    """Raised when report files cannot be read or written"""
    pass

# =============================================================================
# EXIT CODES
# =============================================================================

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3

def exit_code_for(exc: BaseException) -> int:
    """Map an exception raised by a subcommand to the documented exit code"""
    if isinstance(exc, (ReportIOError, OSError)):
        return EXIT_IO
    if isinstance(exc, SystemExit):
        code = exc.code
        if code is None:
            return EXIT_OK
        return code if isinstance(code, int) else EXIT_USAGE
    return EXIT_FAILURE

# =============================================================================
# UTILITY FUNCTIONS
# =============================================================================

def format_error(exc: BaseException) -> Dict[str, Any]:
    """Create a structured error payload for logging"""
    if isinstance(exc, ConfigError):
        error_type = "config_error"
    elif isinstance(exc, AuditFailureError):
        error_type = "audit_failure"
    elif isinstance(exc, AcceptanceFailure):
        error_type = "acceptance_failure"
    elif isinstance(exc, (ReportIOError, OSError)):
        error_type = "io_error"
    elif isinstance(exc, PrecltError):
        error_type = "computation_error"
    else:
        error_type = "internal_error"

    return {
        "error": error_type,
        "message": str(exc),
        "type": type(exc).__name__,
        "exit_code": exit_code_for(exc),
    }

def log_error(exc: BaseException) -> int:
    """Log a failure the way the CLI reports it and return its exit code"""
    payload = format_error(exc)
    if payload["error"] == "internal_error":
        logger.error(f"Unhandled exception: {exc}", exc_info=exc)
    else:
        logger.error(f"{payload['error']}: {payload['message']}")
    return payload["exit_code"]
