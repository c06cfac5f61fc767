"""Frozen text-encoder stand-in: hash tokenizer, a small deterministic MLP
encoder with an analytic vector-Jacobian product, and no trainable state.

The encoder maps a token sequence to a unit-norm embedding through
position-weighted pooling, one tanh hidden layer, and a final affine map
followed by L2 normalization. Weights are drawn once from a seeded PRNG and
frozen; only prompt context vectors are ever optimized elsewhere.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

__all__ = [
    "DEFAULT_D_TOK",
    "DEFAULT_D_HID",
    "DEFAULT_D_EMB",
    "FrozenTextEncoder",
    "ToyTextEncoder",
    "pooling_weights",
    "tokenize",
]

DEFAULT_D_TOK = 32
DEFAULT_D_HID = 64
DEFAULT_D_EMB = 64

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def _word_seed(word: str, vocab_seed: int) -> int:
    """Stable 64-bit stream seed for a (word, vocab_seed) pair."""
    digest = hashlib.blake2b(f"{vocab_seed}:{word}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def tokenize(text: str, vocab_seed: int, d_tok: int = DEFAULT_D_TOK) -> np.ndarray:
    """Map text to an (n_words, d_tok) token matrix.

    Each whitespace word is lowercased, stripped of punctuation, hashed
    together with ``vocab_seed``, and expanded into a fixed pseudo-random
    vector with entries N(0,1)/sqrt(d_tok). The same (word, vocab_seed)
    always produces the identical vector.
    """
    if d_tok < 1:
        raise ValueError(f"d_tok must be >= 1, got {d_tok}")
    words = text.lower().translate(_PUNCT_TABLE).split()
    if not words:
        raise ValueError("text is empty after lowercasing and stripping punctuation")
    scale = 1.0 / np.sqrt(float(d_tok))
    rows = []
    for w in words:
        rng = np.random.Generator(np.random.PCG64(_word_seed(w, vocab_seed)))
        rows.append(rng.standard_normal(d_tok) * scale)
    return np.stack(rows, axis=0)


def pooling_weights(n: int) -> np.ndarray:
    """Positional pooling weights w_j = 1 + j/n for j = 0..n-1.

    Order-dependent on purpose: a plain mean would make prompt-token order
    meaningless.
    """
    if n < 1:
        raise ValueError(f"token count must be >= 1, got {n}")
    j = np.arange(n, dtype=np.float64)
    return 1.0 + j / float(n)


class FrozenTextEncoder(Protocol):
    """Deterministic encoder contract: unit-norm outputs plus an exact VJP."""

    d_tok: int
    d_emb: int

    def encode(self, tokens: np.ndarray) -> np.ndarray: ...

    def vjp(self, tokens: np.ndarray, cotangent: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ToyTextEncoder:
    """Two-layer tanh MLP over pooled tokens, with frozen seeded weights.

    Forward: p = sum_j w_j t_j / sum_j w_j, h = tanh(W1 p + b1),
    e = W2 h + b2, output e / ||e||.
    """

    seed: int
    d_tok: int = DEFAULT_D_TOK
    d_hid: int = DEFAULT_D_HID
    d_emb: int = DEFAULT_D_EMB
    w1: np.ndarray = field(init=False, repr=False)
    b1: np.ndarray = field(init=False, repr=False)
    w2: np.ndarray = field(init=False, repr=False)
    b2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.d_tok, self.d_hid, self.d_emb) < 1:
            raise ValueError("encoder dims must all be >= 1")
        rng = np.random.Generator(np.random.PCG64(self.seed))
        s1 = 1.0 / np.sqrt(float(self.d_tok))
        s2 = 1.0 / np.sqrt(float(self.d_hid))
        # biases stay an order of magnitude below the matmul signal; a full
        # 1/sqrt(fan_in) bias would drown the pooled inputs and collapse all
        # text embeddings onto one direction
        weights = {
            "w1": rng.standard_normal((self.d_hid, self.d_tok)) * s1,
            "b1": rng.standard_normal(self.d_hid) * (0.1 * s1),
            "w2": rng.standard_normal((self.d_emb, self.d_hid)) * s2,
            "b2": rng.standard_normal(self.d_emb) * (0.1 * s2),
        }
        for name, arr in weights.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- single-sequence interface -------------------------------------------------

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        t = np.asarray(tokens, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] < 1:
            raise ValueError(f"tokens must be a non-empty (n, d_tok) matrix, got shape {t.shape}")
        if t.shape[1] != self.d_tok:
            raise ValueError(f"token dim {t.shape[1]} does not match encoder d_tok {self.d_tok}")
        return t

    def pool(self, tokens: np.ndarray) -> np.ndarray:
        """Position-weighted mean of the token vectors."""
        t = self._check_tokens(tokens)
        w = pooling_weights(t.shape[0])
        return (w @ t) / float(np.sum(w))

    def encode(self, tokens: np.ndarray) -> np.ndarray:
        """Unit-norm embedding of one token sequence."""
        p = self.pool(tokens)
        e, _ = self.encode_pooled(p[None, :])
        return e[0]

    def vjp(self, tokens: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Gradient of cotangent . encode(tokens) with respect to every token.

        Returns an (n, d_tok) matrix; row j is the gradient for token j.
        """
        t = self._check_tokens(tokens)
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != (self.d_emb,):
            raise ValueError(f"cotangent must have shape ({self.d_emb},), got {cot.shape}")
        p = self.pool(t)
        _, cache = self.encode_pooled(p[None, :])
        gp = self.vjp_pooled(cache, cot[None, :])[0]
        w = pooling_weights(t.shape[0])
        coeff = w / float(np.sum(w))
        return coeff[:, None] * gp[None, :]

    # -- batched pooled-space interface (hot path for training) ---------------------

    def encode_pooled(self, pooled: np.ndarray):
        """Forward pass from pooled vectors (m, d_tok) to unit embeddings (m, d_emb).

        Returns (embeddings, cache); pass the cache to vjp_pooled.
        """
        p = np.asarray(pooled, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != self.d_tok:
            raise ValueError(f"pooled must be (m, {self.d_tok}), got shape {p.shape}")
        h = np.tanh(p @ self.w1.T + self.b1)
        z = h @ self.w2.T + self.b2
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms < 1e-30):
            raise ValueError("pre-normalization embedding collapsed to zero")
        e = z / norms[:, None]
        cache = (h, e, norms)
        return e, cache

    def vjp_pooled(self, cache, cotangents: np.ndarray) -> np.ndarray:
        """Pull cotangents on the unit embeddings back to pooled-vector space."""
        h, e, norms = cache
        c = np.asarray(cotangents, dtype=np.float64)
        if c.shape != e.shape:
            raise ValueError(f"cotangents must have shape {e.shape}, got {c.shape}")
        radial = np.sum(c * e, axis=1, keepdims=True)
        gz = (c - radial * e) / norms[:, None]
        gh = gz @ self.w2
        g1 = gh * (1.0 - h * h)
        return g1 @ self.w1
