"""Batch export of images and texts into the engine's embedding format.

The exporter never trains anything; it is a pure batch-inference writer.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .models import load_backbone
from .writer import ExportError, existing_store_dim, write_store

MANIFEST_KEYS = ("image", "id", "label", "domain", "split")


def load_manifest(path) -> list[dict]:
    """Read a JSONL manifest: one object per row with keys
    image / id / label / attack_type (optional) / domain / split."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ExportError(f"{path}:{lineno}: invalid JSON ({e})") from e
            missing = [k for k in MANIFEST_KEYS if k not in obj]
            if missing:
                raise ExportError(f"{path}:{lineno}: missing keys {missing}")
            rows.append(obj)
    if not rows:
        raise ExportError(f"{path}: manifest has no rows")
    return rows


def _load_image(path_str: str, base: Path) -> Image.Image:
    path = Path(path_str)
    if not path.is_absolute():
        path = base / path
    try:
        with Image.open(path) as img:
            return img.convert("RGB").copy()
    except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
        raise ExportError(f"unreadable image {path}: {e}") from e


def _check_output_dim(out_path, dim: int) -> None:
    existing = existing_store_dim(out_path)
    if existing is not None and existing != dim:
        raise ExportError(
            f"{out_path} already holds dim-{existing} embeddings but the "
            f"selected backbone produces dim {dim}"
        )


def export_images(manifest_path, model_name: str, out_path, batch_size: int = 16) -> int:
    """Encode every manifest row's image; returns the row count written."""
    if batch_size < 1:
        raise ExportError(f"batch size must be >= 1, got {batch_size}")
    rows = load_manifest(manifest_path)
    backbone = load_backbone(model_name)
    _check_output_dim(out_path, backbone.dim)
    base = Path(manifest_path).parent
    blocks = []
    for start in range(0, len(rows), batch_size):
        chunk = rows[start : start + batch_size]
        images = [_load_image(r["image"], base) for r in chunk]
        blocks.append(backbone.encode_images(images))
    vectors = np.concatenate(blocks, axis=0)
    write_store(out_path, vectors, rows)
    return len(rows)


def export_texts(lines, model_name: str, out_path, batch_size: int = 64,
                 domain: str = "priors") -> int:
    """Encode text lines into a store usable as a prior-bank source."""
    lines = [l.strip() for l in lines if l.strip()]
    if not lines:
        raise ExportError("no text lines to export")
    if batch_size < 1:
        raise ExportError(f"batch size must be >= 1, got {batch_size}")
    backbone = load_backbone(model_name)
    _check_output_dim(out_path, backbone.dim)
    blocks = []
    for start in range(0, len(lines), batch_size):
        blocks.append(backbone.encode_texts(lines[start : start + batch_size]))
    vectors = np.concatenate(blocks, axis=0)
    meta = [
        {"id": f"text:{i:04d}", "label": "spoof", "attack_type": None,
         "domain": domain, "split": "train"}
        for i in range(len(lines))
    ]
    write_store(out_path, vectors, meta)
    return len(lines)
