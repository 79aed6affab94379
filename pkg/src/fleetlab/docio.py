"""Helpers shared by the canonical text-document formats.

All on-disk documents (instances, route plans, manifests, checkpoints) are
written by deterministic writers so that re-running a command with the same
seed reproduces identical bytes.  Floats are rendered with 17 significant
digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (exact double round trip)."""
    return format(float(x), ".17g")


def fmt_point(p) -> str:
    return f"[{fmt17(p[0])}, {fmt17(p[1])}]"


def canonical_json(obj: Any) -> str:
    """Key-sorted compact JSON; stable across runs for hashing and storage."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
