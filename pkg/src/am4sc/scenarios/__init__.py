"""Bundled demo scenarios."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled scenario, e.g. ``bundled_path("geo-billing")``."""
    filename = name.replace("-", "_") + ".json"
    path = Path(str(resources.files(__name__).joinpath(filename)))
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return path
