"""
Template loader for plain-text report artifacts.

Templates live as individual files under data/templates and are compiled once.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from jinja2 import Environment, FileSystemLoader, StrictUndefined, Template, TemplateNotFound

from ..core.exceptions import ReportIOError

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent.parent / "data" / "templates"


def _fmt(value: Any, digits: int = 6) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


class TemplateLoader:
    """Loads and renders jinja2 templates from the templates directory."""

    def __init__(self, templates_dir: Optional[Path] = None):
        self.templates_dir = Path(templates_dir) if templates_dir else TEMPLATES_DIR
        self.env = Environment(
            loader=FileSystemLoader(str(self.templates_dir)),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        self.env.filters["fmt"] = _fmt
        self._cache: Dict[str, Template] = {}

    def get(self, name: str) -> Template:
        if name not in self._cache:
            try:
                self._cache[name] = self.env.get_template(name)
            except TemplateNotFound:
                raise ReportIOError(f"Template not found: {self.templates_dir / name}")
            logger.debug(f"Loaded template: {name}")
        return self._cache[name]

    def render(self, name: str, **context: Any) -> str:
        return self.get(name).render(**context)


# Global template loader instance
template_loader = TemplateLoader()
