"""Binary embedding-matrix files ("FVEM") and named-tensor checkpoints.

File layout, all little-endian:

    bytes 0..3   magic  0x46 0x56 0x45 0x4D ("FVEM")
    bytes 4..5   u16 format version, currently 1
    bytes 6..7   u16 reserved, must be 0
    bytes 8..11  u32 row count  (> 0)
    bytes 12..15 u32 column count (> 0)
    bytes 16..   rows*cols float32 values, row-major

Reads and writes are bit-exact inverses of each other on well-formed
files. Checkpoints are a directory of FVEM files plus an ``index.json``
mapping tensor names to files and shapes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FVEM"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


class FvemError(ValueError):
    """Malformed FVEM payload or header."""


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    """Write a 2-D float matrix to ``path`` in FVEM format."""
    arr = np.asarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise FvemError(f"expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    if rows == 0 or cols == 0:
        raise FvemError(f"refusing to write degenerate matrix of shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise FvemError("matrix contains non-finite values")
    payload = _HEADER.pack(MAGIC, VERSION, 0, rows, cols) + np.ascontiguousarray(arr).tobytes()
    Path(path).write_bytes(payload)


def read_embeddings(path: str | Path) -> np.ndarray:
    """Read an FVEM file back into a float32 matrix of shape (rows, cols)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FvemError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, reserved, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FvemError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FvemError(f"{path}: unsupported version {version}")
    if reserved != 0:
        raise FvemError(f"{path}: reserved header field is {reserved}, expected 0")
    if rows == 0 or cols == 0:
        raise FvemError(f"{path}: degenerate shape {rows}x{cols} in header")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) < expected:
        raise FvemError(f"{path}: truncated payload, {len(raw)} bytes < {expected} expected")
    if len(raw) > expected:
        raise FvemError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    arr = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).copy()
    if not np.isfinite(arr).all():
        raise FvemError(f"{path}: payload contains non-finite values")
    return arr


def save_tensors(
    out_dir: str | Path,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
) -> Path:
    """Checkpoint named tensors as FVEM files plus an index.json.

    1-D tensors are stored as single-row matrices; the original shape is
    recorded in the index so ``load_tensors`` restores it exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index: dict = {"tensors": {}}
    if meta:
        index.update(meta)
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        fname = name.replace("/", "_").replace(".", "_") + ".fvem"
        write_embeddings(out / fname, arr.reshape(1, -1) if arr.ndim == 1 else arr)
        index["tensors"][name] = {"file": fname, "shape": list(arr.shape)}
    index_path = out / "index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True))
    return index_path


def load_tensors(ckpt_dir: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Load a checkpoint directory; returns (tensors, index metadata)."""
    ckpt = Path(ckpt_dir)
    index = json.loads((ckpt / "index.json").read_text())
    tensors = {}
    for name, entry in index["tensors"].items():
        arr = read_embeddings(ckpt / entry["file"])
        tensors[name] = arr.reshape(entry["shape"])
    return tensors, index
