"""Command-line interface."""
from .commands import build_parser, run_cli

__all__ = ["build_parser", "run_cli"]
