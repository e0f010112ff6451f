"""Small shared helpers: canonical config hashing and JSON IO."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path


def config_hash(obj) -> str:
    """Stable short hash of any JSON-serializable config (or dataclass)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())
