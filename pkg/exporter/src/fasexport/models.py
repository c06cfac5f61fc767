"""Backbone registry.

Two families:

* ``hash-pool[:dim]`` — a deterministic offline encoder (seeded random
  projection over downsampled pixels / hashed words). No weights to
  download, eval-only, reproducible; the default in air-gapped setups.
* ``clip:<hf-model-name>`` — a real pretrained vision-language model via
  ``transformers``; requires torch plus locally available weights.

Every backbone exposes ``dim``, ``encode_images(list[PIL.Image])`` and
``encode_texts(list[str])``, both returning L2-normalized float32 rows.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

from .writer import ExportError

_HASHPOOL_PATCH = 16  # images are pooled to a 16x16 grayscale grid


def _l2_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ExportError("encoder produced a zero embedding")
    return (x / norms).astype(np.float32)


class HashPoolBackbone:
    """Deterministic projection encoder for offline use.

    Images: grayscale-pool to a fixed grid, then a seeded Gaussian
    projection into the embedding space. Texts: average of per-word hash
    vectors through a second seeded projection. Both outputs are unit
    norm. Not a semantic model; it exists so pipelines and format
    conformance can run without downloaded weights.
    """

    def __init__(self, dim: int = 512, seed: int = 20240501):
        if dim < 1:
            raise ExportError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.name = f"hash-pool:{dim}"
        rng = np.random.Generator(np.random.PCG64(seed))
        n_px = _HASHPOOL_PATCH * _HASHPOOL_PATCH
        self._img_proj = rng.standard_normal((n_px, dim)) / np.sqrt(n_px)
        self._txt_proj = rng.standard_normal((256, dim)) / 16.0

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        rows = np.empty((len(images), _HASHPOOL_PATCH * _HASHPOOL_PATCH))
        for i, img in enumerate(images):
            small = img.convert("L").resize((_HASHPOOL_PATCH, _HASHPOOL_PATCH))
            rows[i] = np.asarray(small, dtype=np.float64).ravel() / 255.0 - 0.5
        return _l2_rows(rows @ self._img_proj)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        feats = np.zeros((len(texts), 256))
        for i, text in enumerate(texts):
            words = text.lower().split()
            if not words:
                raise ExportError("cannot encode an empty text line")
            for w in words:
                digest = hashlib.blake2b(w.encode("utf-8"), digest_size=4).digest()
                feats[i, int.from_bytes(digest, "little") % 256] += 1.0
            feats[i] /= len(words)
        return _l2_rows(feats @ self._txt_proj)


class ClipBackbone:
    """Pretrained CLIP via transformers; weights must be locally available."""

    def __init__(self, model_name: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise ExportError(
                f"clip backend needs torch + transformers installed: {e}"
            ) from e
        try:
            self._model = CLIPModel.from_pretrained(model_name)
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as e:
            raise ExportError(
                f"cannot load pretrained weights for {model_name!r} "
                f"(offline environment?): {e}"
            ) from e
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.projection_dim)
        self.name = f"clip:{model_name}"

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self._processor(images=images, return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return _l2_rows(feats.cpu().numpy().astype(np.float64))

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self._processor(text=texts, return_tensors="pt",
                                 padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return _l2_rows(feats.cpu().numpy().astype(np.float64))


def load_backbone(model_name: str):
    """Resolve a backbone spec string to an encoder instance."""
    if model_name.startswith("hash-pool"):
        parts = model_name.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 512
        return HashPoolBackbone(dim=dim)
    if model_name.startswith("clip:"):
        return ClipBackbone(model_name.split(":", 1)[1])
    raise ExportError(
        f"unknown model {model_name!r}; expected hash-pool[:dim] or clip:<hf-name>"
    )
