"""Learnable prompt state, frozen prior-description bank, and prototype math.

A prompt is L learnable context vectors followed by fixed class tokens for
the shared class name. The unknown-prompt prototype supports two modes:

* ``prompt-space`` (default): average the context matrices first, then
  encode the averaged prompt.
* ``embedding-space``: encode each prompt, then average the embeddings.

Prior descriptions always use the embedding-space mean since texts of
different lengths cannot be averaged token-wise.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .encoders import FrozenTextEncoder, tokenize
from .store import (
    MAGIC,
    VERSION,
    BadMagicError,
    InvalidDimensionError,
    MetadataError,
    TruncatedPayloadError,
    VersionMismatchError,
    sidecar_path,
)
from .vecmath import prototype

__all__ = [
    "CLASS_NAME",
    "PROTOTYPE_MODES",
    "Prompt",
    "PromptSet",
    "PriorBank",
    "bundled_prior_descriptions",
    "load_prior_descriptions",
    "build_prior_bank",
    "init_prompt_set",
    "unknown_prototype",
    "prior_prototype",
    "overall_spoof_embedding",
    "write_prompt_set",
    "read_prompt_contexts",
    "load_prompt_set",
]

CLASS_NAME = "human face"
PROTOTYPE_MODES = ("prompt-space", "embedding-space")

_PROMPT_HEADER = struct.Struct("<4sIIQI")


@dataclass
class Prompt:
    """L learnable context vectors plus frozen class tokens."""

    context: np.ndarray       # (L, d_tok), float64, learnable
    class_tokens: np.ndarray  # (n_cls, d_tok), frozen, shared by every prompt

    def token_seq(self) -> np.ndarray:
        return np.concatenate([self.context, self.class_tokens], axis=0)


@dataclass
class PromptSet:
    """One real prompt and n unknown-spoof prompts sharing L, d_tok and class tokens."""

    real: Prompt
    unknown: list[Prompt]

    def __post_init__(self):
        if len(self.unknown) < 1:
            raise ValueError("need at least one unknown prompt")
        ref = self.real.context.shape
        for i, p in enumerate(self.unknown):
            if p.context.shape != ref:
                raise ValueError(f"unknown prompt {i} context shape {p.context.shape} != {ref}")
            if p.class_tokens is not self.real.class_tokens and not np.array_equal(
                p.class_tokens, self.real.class_tokens
            ):
                raise ValueError(f"unknown prompt {i} has diverging class tokens")

    @property
    def n_unknown(self) -> int:
        return len(self.unknown)

    @property
    def context_len(self) -> int:
        return self.real.context.shape[0]

    @property
    def d_tok(self) -> int:
        return self.real.context.shape[1]

    @property
    def class_tokens(self) -> np.ndarray:
        return self.real.class_tokens

    def all_contexts(self) -> np.ndarray:
        """Stacked contexts, row 0 the real prompt: ((n_unknown+1), L, d_tok)."""
        return np.stack([self.real.context] + [p.context for p in self.unknown], axis=0)

    def copy(self) -> "PromptSet":
        ct = self.class_tokens
        return PromptSet(
            real=Prompt(self.real.context.copy(), ct),
            unknown=[Prompt(p.context.copy(), ct) for p in self.unknown],
        )


@dataclass(frozen=True)
class PriorBank:
    """Spoof-knowledge descriptions and their frozen unit embeddings."""

    descriptions: tuple[str, ...]
    embeddings: np.ndarray  # (n_p, d_emb), unit rows, immutable

    def __post_init__(self):
        if len(self.descriptions) < 1:
            raise ValueError("prior bank needs at least one description")
        if self.embeddings.shape[0] != len(self.descriptions):
            raise ValueError("one embedding per description required")
        self.embeddings.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.descriptions)


def bundled_prior_descriptions() -> list[str]:
    """The ready-made spoof-pattern descriptions shipped with the package."""
    text = resources.files("promptfas").joinpath("data/prior_descriptions.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_prior_descriptions(path=None) -> list[str]:
    """Descriptions from a UTF-8 text file (one per line), or the bundled set."""
    if path is None:
        lines = bundled_prior_descriptions()
    else:
        lines = [l.strip() for l in Path(path).read_text("utf-8").splitlines() if l.strip()]
    if not lines:
        raise ValueError("prior description file contains no descriptions")
    return lines


def build_prior_bank(
    encoder: FrozenTextEncoder, descriptions, vocab_seed: int
) -> PriorBank:
    """Encode each description once; the bank is immutable afterwards."""
    descriptions = tuple(descriptions)
    if not descriptions:
        raise ValueError("no prior descriptions given")
    rows = [encoder.encode(tokenize(d, vocab_seed, encoder.d_tok)) for d in descriptions]
    return PriorBank(descriptions, np.stack(rows, axis=0))


def init_prompt_set(
    context_len: int,
    d_tok: int,
    n_unknown: int,
    seed: int,
    vocab_seed: int,
    class_name: str = CLASS_NAME,
) -> PromptSet:
    """Fresh prompt set with contexts drawn i.i.d. from N(0, 0.02^2).

    The 0.02 scale follows common context-optimization practice. Class
    tokens come from the tokenizer and are shared, never trained.
    """
    if context_len < 1 or n_unknown < 1:
        raise ValueError("context_len and n_unknown must be >= 1")
    class_tokens = tokenize(class_name, vocab_seed, d_tok)
    class_tokens.setflags(write=False)
    rng = np.random.Generator(np.random.PCG64(seed))
    ctx = rng.normal(0.0, 0.02, size=(n_unknown + 1, context_len, d_tok))
    return PromptSet(
        real=Prompt(ctx[0].copy(), class_tokens),
        unknown=[Prompt(ctx[i + 1].copy(), class_tokens) for i in range(n_unknown)],
    )


def unknown_prototype(
    pset: PromptSet, encoder: FrozenTextEncoder, mode: str = "prompt-space"
) -> np.ndarray:
    """Prototype of the unknown-spoof prompts.

    prompt-space: encode the mean context matrix (unit norm output).
    embedding-space: mean of the individual embeddings (not re-normalized).
    """
    if mode not in PROTOTYPE_MODES:
        raise ValueError(f"mode must be one of {PROTOTYPE_MODES}, got {mode!r}")
    if mode == "prompt-space":
        mean_ctx = np.mean(np.stack([p.context for p in pset.unknown], axis=0), axis=0)
        seq = np.concatenate([mean_ctx, pset.class_tokens], axis=0)
        return encoder.encode(seq)
    embs = [encoder.encode(p.token_seq()) for p in pset.unknown]
    return prototype(embs)


def prior_prototype(bank: PriorBank) -> np.ndarray:
    """Mean of the frozen description embeddings (embedding-space only)."""
    return prototype(list(bank.embeddings))


def overall_spoof_embedding(
    pset: PromptSet, bank: PriorBank, encoder: FrozenTextEncoder
) -> np.ndarray:
    """Unweighted mean over all unknown-prompt and prior embeddings.

    Every one of the n_unknown + n_prior members contributes equally.
    """
    rows = [encoder.encode(p.token_seq()) for p in pset.unknown]
    rows.extend(list(bank.embeddings))
    return prototype(rows)


def near_zero_prototype(vec: np.ndarray, what: str, eps: float = 1e-6) -> bool:
    """Warn (not raise) when a prototype has collapsed to near-zero norm."""
    if float(np.linalg.norm(vec)) < eps:
        warnings.warn(f"{what} prototype is near-zero norm; distances to it are unstable")
        return True
    return False


# -- learned prompt checkpoint -------------------------------------------------------
#
# Same container as the embedding file, with one extra u32 for the context
# length L after the row count. Rows are the (n_unknown+1)*L context vectors
# (real prompt first), float32. The sidecar tags each row with its role.


def write_prompt_set(pset: PromptSet, path) -> None:
    path = Path(path)
    contexts = pset.all_contexts()
    m, ctx_len, d_tok = contexts.shape
    header = _PROMPT_HEADER.pack(MAGIC, VERSION, d_tok, m * ctx_len, ctx_len)
    payload = np.ascontiguousarray(contexts.reshape(m * ctx_len, d_tok), dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    roles = ["real"] + [f"unknown_{i}" for i in range(pset.n_unknown)]
    with sidecar_path(path).open("w", encoding="utf-8") as f:
        for r in range(m):
            for j in range(ctx_len):
                f.write(json.dumps({"role": roles[r], "position": j}) + "\n")


def read_prompt_contexts(path) -> tuple[np.ndarray, list[str]]:
    """Read back stacked contexts ((m, L, d_tok), float64) and per-prompt roles."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PROMPT_HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than prompt header")
    magic, version, d_tok, count, ctx_len = _PROMPT_HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    if d_tok == 0 or ctx_len == 0:
        raise InvalidDimensionError(f"{path}: zero dim or context length in header")
    if count % ctx_len != 0:
        raise MetadataError(f"{path}: row count {count} not divisible by context length {ctx_len}")
    expected = count * d_tok * 4
    payload = raw[_PROMPT_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayloadError(f"{path}: payload {len(payload)} bytes, expected {expected}")
    rows = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    m = count // ctx_len
    contexts = rows.reshape(m, ctx_len, d_tok)
    roles = _read_prompt_roles(sidecar_path(path), m, ctx_len)
    return contexts, roles


def _read_prompt_roles(meta_path: Path, m: int, ctx_len: int) -> list[str]:
    if not meta_path.exists():
        raise MetadataError(f"missing prompt sidecar {meta_path}")
    rows = []
    with meta_path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if len(rows) != m * ctx_len:
        raise MetadataError(f"{meta_path}: {len(rows)} rows, expected {m * ctx_len}")
    roles = []
    for r in range(m):
        block = rows[r * ctx_len : (r + 1) * ctx_len]
        role = block[0]["role"]
        if any(obj["role"] != role for obj in block):
            raise MetadataError(f"{meta_path}: mixed roles within prompt block {r}")
        roles.append(role)
    if roles and roles[0] != "real":
        raise MetadataError(f"{meta_path}: first prompt must be tagged 'real', got {roles[0]!r}")
    return roles


def load_prompt_set(path, class_tokens: np.ndarray) -> PromptSet:
    """Rebuild a PromptSet from a checkpoint plus externally supplied class tokens."""
    contexts, roles = read_prompt_contexts(path)
    ct = np.asarray(class_tokens, dtype=np.float64)
    ct.setflags(write=False)
    if ct.shape[1] != contexts.shape[2]:
        raise ValueError(f"class token dim {ct.shape[1]} != checkpoint d_tok {contexts.shape[2]}")
    return PromptSet(
        real=Prompt(contexts[0].copy(), ct),
        unknown=[Prompt(contexts[i].copy(), ct) for i in range(1, contexts.shape[0])],
    )
