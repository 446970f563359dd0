"""Allow `python -m preclt`."""
import sys

from .cli import run_cli
from .core.config import configure_logging

if __name__ == "__main__":
    configure_logging()
    sys.exit(run_cli(sys.argv[1:]))
