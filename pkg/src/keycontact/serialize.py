"""JSON serialization for geometric values and records.

All record schemas carry a mandatory "schema" version field. Canonical JSON
(sorted keys, compact separators, plain floats) makes persisted artifacts
byte-stable for content addressing and determinism checks.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from .errors import SchemaError
from .geometry import Pose

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "canonical_json",
    "pose_to_json",
    "pose_from_json",
    "vec_to_json",
    "check_schema",
]


def _plain(x: Any) -> Any:
    """Recursively convert numpy scalars/arrays into plain Python values."""
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def canonical_json(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace, repr floats."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def vec_to_json(v) -> list[float]:
    return [float(x) for x in np.asarray(v, dtype=float).ravel()]


def pose_to_json(p: Pose) -> dict:
    """Quaternion scalar-first (w, x, y, z) plus translation in meters."""
    return {"q": vec_to_json(p.q), "t": vec_to_json(p.t)}


def pose_from_json(d: dict) -> Pose:
    try:
        return Pose(np.array(d["q"], dtype=float), np.array(d["t"], dtype=float))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed pose record: {e}") from e


def check_schema(d: dict, expected: int = SCHEMA_VERSION, kind: str = "record") -> None:
    v = d.get("schema")
    if v != expected:
        raise SchemaError(f"{kind} schema version {v!r} unsupported (expected {expected})")
