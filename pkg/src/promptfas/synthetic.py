"""Deterministic synthetic embedding benchmarks.

Each domain is a set of Gaussian clusters on the unit sphere: one real
cluster plus optional attack clusters at configurable angular separation
from it. A covariate offset added to every sample of a domain models
capture-condition shift; attack clusters absent from the source model
semantic shift. Samples are L2-normalized after the offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import ProtocolSpec
from .store import EmbeddingStore, RecordMeta

__all__ = [
    "AttackCluster",
    "DomainSpec",
    "generate",
    "default_benchmark",
    "DEFAULT_BENCHMARK",
]


@dataclass(frozen=True)
class AttackCluster:
    attack_type: str
    mean: np.ndarray
    std: float
    count: int

    def __post_init__(self):
        if self.std <= 0.0 or self.count < 1:
            raise ValueError("attack cluster needs std > 0 and count >= 1")


@dataclass(frozen=True)
class DomainSpec:
    """One domain: a real cluster, optional attack clusters, and an offset."""

    name: str
    real_mean: np.ndarray
    real_std: float
    real_count: int
    split: str
    attacks: tuple[AttackCluster, ...] = ()
    covariate_offset: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.real_std <= 0.0 or self.real_count < 1:
            raise ValueError("real cluster needs std > 0 and count >= 1")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        dim = np.asarray(self.real_mean).shape[0]
        for a in self.attacks:
            if np.asarray(a.mean).shape[0] != dim:
                raise ValueError(f"attack {a.attack_type!r} mean dim mismatch")
        if self.covariate_offset is not None:
            if np.asarray(self.covariate_offset).shape[0] != dim:
                raise ValueError("covariate offset dim mismatch")


def sample_cluster(rng: np.random.Generator, mean: np.ndarray, std: float, count: int) -> np.ndarray:
    """Raw Gaussian cluster draws, before offset and normalization."""
    mean = np.asarray(mean, dtype=np.float64)
    return mean[None, :] + std * rng.standard_normal((count, mean.shape[0]))


def generate(spec: DomainSpec) -> EmbeddingStore:
    """Sample the domain into a unit-norm embedding store.

    Each cluster draws from its own PRNG substream, so per-cluster output is
    independent of the other clusters' counts.
    """
    dim = np.asarray(spec.real_mean).shape[0]
    streams = np.random.SeedSequence(spec.seed).spawn(1 + len(spec.attacks))
    offset = (
        np.zeros(dim)
        if spec.covariate_offset is None
        else np.asarray(spec.covariate_offset, dtype=np.float64)
    )

    blocks: list[np.ndarray] = []
    metas: list[RecordMeta] = []
    rng = np.random.Generator(np.random.PCG64(streams[0]))
    real = sample_cluster(rng, spec.real_mean, spec.real_std, spec.real_count) + offset
    blocks.append(real)
    metas.extend(
        RecordMeta(
            id=f"{spec.name}:real:{i:05d}", label="real", attack_type=None,
            domain=spec.name, split=spec.split,
        )
        for i in range(spec.real_count)
    )
    for ai, a in enumerate(spec.attacks):
        rng = np.random.Generator(np.random.PCG64(streams[1 + ai]))
        pts = sample_cluster(rng, a.mean, a.std, a.count) + offset
        blocks.append(pts)
        metas.extend(
            RecordMeta(
                id=f"{spec.name}:{a.attack_type}:{i:05d}", label="spoof",
                attack_type=a.attack_type, domain=spec.name, split=spec.split,
            )
            for i in range(a.count)
        )
    points = np.concatenate(blocks, axis=0)
    norms = np.linalg.norm(points, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("degenerate zero-norm sample; adjust means or std")
    return EmbeddingStore(dim, (points / norms[:, None]).astype(np.float32), metas)


@dataclass(frozen=True)
class BenchmarkLayout:
    """Geometry and sizes of the default two-domain benchmark.

    The real-cluster direction is the frozen encoder's embedding of
    ``anchor_text``. Placing image clusters on the text-embedding manifold
    mirrors the cross-modal alignment a pretrained vision-language backbone
    provides; with a direction picked uniformly at random the text side
    could never represent the real cluster.
    """

    dim: int = 64
    std: float = 0.13
    source_reals: int = 2000
    target_reals: int = 500
    attack_count: int = 300
    attack_angles_deg: tuple[float, ...] = (30.0, 45.0, 60.0)
    # how strongly each attack's off-axis direction follows the prior
    # spoof-description prototype; high-fidelity attacks sit near what the
    # descriptions talk about, with per-cluster residual randomness
    prior_alignment: tuple[float, ...] = (0.7, 0.5, 0.3)
    covariate_scale: float = 0.5  # offset norm as a fraction of std
    anchor_text: str = "genuine bona fide living person recorded directly"
    encoder_seed: int = 7
    vocab_seed: int = 101
    d_tok: int = 32
    d_hid: int = 64


DEFAULT_BENCHMARK = BenchmarkLayout()


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _orthogonal_unit(rng: np.random.Generator, anchor: np.ndarray) -> np.ndarray:
    v = rng.standard_normal(anchor.shape[0])
    v -= (v @ anchor) * anchor
    return v / np.linalg.norm(v)


def default_benchmark(
    seed: int, layout: BenchmarkLayout = DEFAULT_BENCHMARK
) -> tuple[EmbeddingStore, ProtocolSpec]:
    """The stock two-shift benchmark.

    Source domain: reals only (training split). Target domain: reals under a
    0.5*std covariate offset plus three unseen attack clusters placed at
    moderate angles from the real direction, with off-axis components
    leaning toward the prior spoof-description prototype.
    """
    from .encoders import ToyTextEncoder, tokenize
    from .prompts import build_prior_bank, bundled_prior_descriptions, prior_prototype

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(77,))))
    encoder = ToyTextEncoder(seed=layout.encoder_seed, d_tok=layout.d_tok,
                             d_hid=layout.d_hid, d_emb=layout.dim)
    mu = encoder.encode(tokenize(layout.anchor_text, layout.vocab_seed, layout.d_tok))
    bank = build_prior_bank(encoder, bundled_prior_descriptions(), layout.vocab_seed)
    prior_dir = prior_prototype(bank)
    prior_perp = prior_dir - (prior_dir @ mu) * mu
    prior_perp /= np.linalg.norm(prior_perp)

    attacks = []
    for k, (angle, mix) in enumerate(zip(layout.attack_angles_deg, layout.prior_alignment)):
        resid = _orthogonal_unit(rng, mu)
        resid -= (resid @ prior_perp) * prior_perp
        resid /= np.linalg.norm(resid)
        q = mix * prior_perp + np.sqrt(max(1.0 - mix * mix, 0.0)) * resid
        theta = np.deg2rad(angle)
        direction = np.cos(theta) * mu + np.sin(theta) * q
        attacks.append(
            AttackCluster(
                attack_type=f"attack_{k}", mean=direction, std=layout.std,
                count=layout.attack_count,
            )
        )
    offset = layout.covariate_scale * layout.std * _unit(rng, layout.dim)

    source = DomainSpec(
        name="source", real_mean=mu, real_std=layout.std,
        real_count=layout.source_reals, split="train", seed=seed,
    )
    target = DomainSpec(
        name="target", real_mean=mu, real_std=layout.std,
        real_count=layout.target_reals, split="test",
        attacks=tuple(attacks), covariate_offset=offset, seed=seed + 1,
    )
    store = EmbeddingStore.concatenate([generate(source), generate(target)])
    spec = ProtocolSpec(
        name="synthetic-default",
        source_domains=("source",),
        target_domains=("target",),
        held_out_attack=None,
        mode="cross_domain",
    )
    return store, spec
