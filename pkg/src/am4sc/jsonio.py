"""Strict JSON object handling and canonical serialization.

All documents the engine writes (workflow documents, reports, test suites)
go through :func:`canonical_dumps` so equal values yield byte-identical text.
"""

from __future__ import annotations

import json
from typing import Any


def canonical_dumps(obj: Any) -> str:
    """Serialize with sorted keys and fixed separators (diff-stable)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def require_object(obj: Any, *, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected a JSON object, got {type(obj).__name__}")
    return obj


def take_fields(
    obj: Any,
    required: tuple[str, ...],
    optional: tuple[str, ...] = (),
    *,
    where: str,
) -> dict:
    """Validate an object's key set. Unknown fields are rejected."""
    data = require_object(obj, where=where)
    missing = [key for key in required if key not in data]
    if missing:
        raise ValueError(f"{where}: missing fields {missing}")
    unknown = [key for key in data if key not in required and key not in optional]
    if unknown:
        raise ValueError(f"{where}: unknown fields {unknown}")
    return data
