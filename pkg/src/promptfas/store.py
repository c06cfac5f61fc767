"""Binary embedding container plus JSONL sidecar metadata.

File layout (little-endian): magic ``FASE``, u32 version (currently 1),
u32 dim, u64 count, then count*dim IEEE-754 binary32 values row-major.
The sidecar at ``<path>.meta.jsonl`` holds one JSON object per row, in row
order: {"id", "label", "attack_type", "domain", "split"}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "VERSION",
    "EmbeddingFileError",
    "BadMagicError",
    "VersionMismatchError",
    "InvalidDimensionError",
    "TruncatedPayloadError",
    "DuplicateIdError",
    "MetadataError",
    "RecordMeta",
    "EmbeddingStore",
    "read_embeddings",
    "write_embeddings",
]

MAGIC = b"FASE"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")

VALID_LABELS = ("real", "spoof")
VALID_SPLITS = ("train", "test")


class EmbeddingFileError(Exception):
    """Base class for embedding container format errors."""


class BadMagicError(EmbeddingFileError):
    pass


class VersionMismatchError(EmbeddingFileError):
    pass


class InvalidDimensionError(EmbeddingFileError):
    pass


class TruncatedPayloadError(EmbeddingFileError):
    pass


class DuplicateIdError(EmbeddingFileError):
    pass


class MetadataError(EmbeddingFileError):
    pass


@dataclass(frozen=True)
class RecordMeta:
    """Per-row metadata: identity, class label, attack type, domain, split."""

    id: str
    label: str
    attack_type: str | None
    domain: str
    split: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        if self.label not in VALID_LABELS:
            raise ValueError(f"label must be one of {VALID_LABELS}, got {self.label!r}")
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "attack_type": self.attack_type,
            "domain": self.domain,
            "split": self.split,
        }


class EmbeddingStore:
    """Fixed-dim float32 embedding rows paired with per-row metadata."""

    def __init__(self, dim: int, vectors: np.ndarray, metas: list[RecordMeta]):
        if dim < 1:
            raise InvalidDimensionError(f"dim must be >= 1, got {dim}")
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] != dim:
            raise ValueError(f"vectors must have shape (n, {dim}), got {vectors.shape}")
        if vectors.shape[0] != len(metas):
            raise ValueError(f"{vectors.shape[0]} rows but {len(metas)} metadata records")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors contain non-finite values")
        seen: set[str] = set()
        for m in metas:
            if m.id in seen:
                raise DuplicateIdError(f"duplicate row id {m.id!r}")
            seen.add(m.id)
        self.dim = dim
        self.vectors = vectors
        self.metas = list(metas)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
            and self.metas == other.metas
        )

    def subset(self, mask) -> "EmbeddingStore":
        """New store holding the rows selected by a boolean mask or index array."""
        idx = np.arange(len(self))[np.asarray(mask)]
        return EmbeddingStore(self.dim, self.vectors[idx], [self.metas[i] for i in idx])

    def labels(self) -> np.ndarray:
        return np.array([m.label for m in self.metas])

    def as_float64(self) -> np.ndarray:
        """Rows promoted to float64 for computation."""
        return self.vectors.astype(np.float64)

    @staticmethod
    def concatenate(stores: list["EmbeddingStore"]) -> "EmbeddingStore":
        if not stores:
            raise ValueError("cannot concatenate zero stores")
        dim = stores[0].dim
        for s in stores[1:]:
            if s.dim != dim:
                raise ValueError(f"dim mismatch while concatenating: {s.dim} vs {dim}")
        vectors = np.concatenate([s.vectors for s in stores], axis=0)
        metas = [m for s in stores for m in s.metas]
        return EmbeddingStore(dim, vectors, metas)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.jsonl")


def write_embeddings(store: EmbeddingStore, path) -> None:
    """Write the binary container and its metadata sidecar."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, store.dim, len(store))
    payload = np.ascontiguousarray(store.vectors, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    with sidecar_path(path).open("w", encoding="utf-8") as f:
        for m in store.metas:
            f.write(json.dumps(m.to_json_obj(), ensure_ascii=False) + "\n")


def read_embeddings(path, meta_path=None) -> EmbeddingStore:
    """Read a store back; raises a distinct error per corruption mode.

    ``meta_path`` overrides the default ``<path>.meta.jsonl`` sidecar.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}, expected {VERSION}")
    if dim == 0:
        raise InvalidDimensionError(f"{path}: header declares dim == 0")
    expected = count * dim * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise TruncatedPayloadError(
            f"{path}: {len(payload) - expected} trailing bytes after payload"
        )
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    sidecar = Path(meta_path) if meta_path is not None else sidecar_path(path)
    metas = _read_sidecar(sidecar, count)
    return EmbeddingStore(dim, vectors, metas)


def _read_sidecar(meta_path: Path, count: int) -> list[RecordMeta]:
    if not meta_path.exists():
        raise MetadataError(f"missing metadata sidecar {meta_path}")
    metas: list[RecordMeta] = []
    with meta_path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MetadataError(f"{meta_path}:{lineno}: invalid JSON ({e})") from e
            try:
                metas.append(
                    RecordMeta(
                        id=obj["id"],
                        label=obj["label"],
                        attack_type=obj.get("attack_type"),
                        domain=obj["domain"],
                        split=obj["split"],
                    )
                )
            except (KeyError, ValueError) as e:
                raise MetadataError(f"{meta_path}:{lineno}: bad record ({e})") from e
    if len(metas) != count:
        raise MetadataError(
            f"{meta_path}: {len(metas)} metadata rows but binary declares {count}"
        )
    return metas
