"""Writer for the engine's binary embedding container.

Layout (little-endian): magic ``FASE``, u32 version (1), u32 dim,
u64 count, then count*dim IEEE-754 binary32 values row-major. Metadata
sidecar at ``<path>.meta.jsonl``: one JSON object per row, in row order,
with keys id / label / attack_type / domain / split.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FASE"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class ExportError(Exception):
    """Raised for manifest, image, or output-consistency problems."""


def existing_store_dim(path) -> int | None:
    """Dim declared by an existing embedding file, or None if absent."""
    path = Path(path)
    if not path.exists():
        return None
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ExportError(f"{path} exists but is too short to be an embedding file")
    magic, version, dim, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ExportError(f"{path} exists but has foreign magic {magic!r}")
    if version != VERSION:
        raise ExportError(f"{path} exists with unsupported version {version}")
    return dim


def write_store(path, vectors: np.ndarray, meta_rows: list[dict]) -> None:
    """Write vectors (n, dim) float32 plus the metadata sidecar."""
    path = Path(path)
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    n, dim = vectors.shape
    if n != len(meta_rows):
        raise ExportError(f"{n} embedding rows but {len(meta_rows)} metadata rows")
    seen = set()
    for row in meta_rows:
        if row["id"] in seen:
            raise ExportError(f"duplicate id {row['id']!r} in manifest")
        seen.add(row["id"])
        if row["label"] not in ("real", "spoof"):
            raise ExportError(f"label must be real or spoof, got {row['label']!r}")
        if row["split"] not in ("train", "test"):
            raise ExportError(f"split must be train or test, got {row['split']!r}")
    path.write_bytes(_HEADER.pack(MAGIC, VERSION, dim, n) + vectors.tobytes())
    sidecar = Path(str(path) + ".meta.jsonl")
    with sidecar.open("w", encoding="utf-8") as f:
        for row in meta_rows:
            obj = {
                "id": row["id"],
                "label": row["label"],
                "attack_type": row.get("attack_type"),
                "domain": row["domain"],
                "split": row["split"],
            }
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
