"""
Frozen acceptance thresholds, loaded once from data/acceptance.json.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.exceptions import ConfigParseError

logger = logging.getLogger(__name__)

DEFAULT_PATH = Path(__file__).parent.parent / "data" / "acceptance.json"


class Thresholds:
    """Read-only view of the acceptance thresholds"""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else DEFAULT_PATH
        self._data: Optional[Dict[str, Any]] = None

    @property
    def data(self) -> Dict[str, Any]:
        if self._data is None:
            try:
                with open(self.path, "r", encoding="utf-8") as f:
                    self._data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigParseError(f"{self.path}:{e.lineno}:{e.colno}: {e.msg}")
            logger.debug(f"Loaded acceptance thresholds from {self.path}")
        return self._data

    def get(self, key: str) -> Any:
        try:
            return self.data[key]
        except KeyError:
            raise ConfigParseError(f"Threshold '{key}' missing from {self.path}")

    def statistical_checks(self) -> List[Dict[str, Any]]:
        return list(self.get("statistical"))


# Global thresholds instance
thresholds = Thresholds()
