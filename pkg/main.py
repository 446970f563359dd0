#!/usr/bin/env python3
"""
preclt - Precision-matrix CLT laboratory
Single entry point for the command line

Subcommands:
- simulate: one Monte Carlo experiment with CSV/JSON/verdict outputs
- verify: identity audits (--fast) and the statistical suite (--full)
- sweep: single-entry runs over an (n, y, distribution) grid
- report: regenerate a summary from an existing samples.csv
"""
import logging
import sys

from preclt.cli import run_cli
from preclt.core.config import config, configure_logging

# =============================================================================
# LOGGING SETUP
# =============================================================================

configure_logging()

logger = logging.getLogger(__name__)
logger.debug(f"Starting preclt with log level {config.log_level}")

# =============================================================================
# ENTRY POINT
# =============================================================================

if __name__ == "__main__":
    sys.exit(run_cli(sys.argv[1:]))
