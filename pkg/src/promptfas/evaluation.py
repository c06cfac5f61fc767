"""Scoring, threshold classification, error-rate metrics, and evaluation
protocols.

The probability of "real" for a sample is the two-way temperature softmax
over its cosine similarities to the real-prompt embedding and the overall
spoof embedding. AUC uses the exact rank (Mann-Whitney) statistic with ties
counted one half. The equal error rate interpolates along the convex hull
of the ROC staircase, the standard biometric convention; at the EER
operating point APCER and BPCER coincide with the EER by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .prompts import PriorBank, overall_spoof_embedding
from .store import EmbeddingStore
from .trainer import TrainConfig, fit
from .vecmath import softmax_probs

__all__ = [
    "ScoredSample",
    "ProtocolSpec",
    "EvalReport",
    "ProtocolResult",
    "predict_real_probability",
    "classify",
    "error_rates",
    "auc",
    "eer_and_hter",
    "build_protocol",
    "run_protocol",
    "to_canonical_json",
]


@dataclass(frozen=True)
class ScoredSample:
    """One scored test sample: probability of real plus ground truth."""

    id: str
    p_real: float
    label: str
    attack_type: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_real <= 1.0:
            raise ValueError(f"p_real must be in [0, 1], got {self.p_real}")
        if self.label not in ("real", "spoof"):
            raise ValueError(f"label must be real or spoof, got {self.label!r}")


@dataclass(frozen=True)
class ProtocolSpec:
    """Which domains train and test, and which attack type is withheld."""

    name: str
    source_domains: tuple[str, ...]
    target_domains: tuple[str, ...]
    held_out_attack: str | None = None
    mode: str = "cross_domain"

    def __post_init__(self):
        if not self.source_domains or not self.target_domains:
            raise ValueError("source and target domains must be non-empty")
        if self.mode not in ("cross_domain", "intra_domain"):
            raise ValueError(f"unknown protocol mode {self.mode!r}")


def predict_real_probability(f_v, e_r, e_s, tau: float) -> float:
    """Softmax probability that the sample is real, from the two similarities.

    The predicted class is the more similar prompt (argmax over the softmax).
    """
    from .vecmath import cosine_similarity

    sims = [cosine_similarity(f_v, e_r), cosine_similarity(f_v, e_s)]
    return float(softmax_probs(sims, tau)[0])


def classify(p_real: float, threshold: float) -> str:
    """Threshold rule: real iff p_real >= threshold (ties classify as real)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return "real" if p_real >= threshold else "spoof"


def _split_scores(samples) -> tuple[np.ndarray, np.ndarray]:
    reals = np.array([s.p_real for s in samples if s.label == "real"], dtype=np.float64)
    spoofs = np.array([s.p_real for s in samples if s.label == "spoof"], dtype=np.float64)
    if reals.size == 0 or spoofs.size == 0:
        raise ValueError("need at least one real and one spoof sample")
    return reals, spoofs


def error_rates(samples, threshold: float) -> tuple[float, float, float]:
    """(APCER, BPCER, ACER) at a scalar threshold.

    APCER: spoof samples classified real. BPCER: real samples classified
    spoof. ACER is their mean, exactly.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    reals, spoofs = _split_scores(samples)
    apcer = float(np.mean(spoofs >= threshold))
    bpcer = float(np.mean(reals < threshold))
    return apcer, bpcer, (apcer + bpcer) / 2.0


def auc(samples) -> float:
    """Probability a random real outscores a random spoof, ties counted half.

    Exact rank statistic, not a trapezoidal approximation.
    """
    reals, spoofs = _split_scores(samples)
    scores = np.concatenate([reals, spoofs])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    r_real = float(np.sum(ranks[: reals.size]))
    n_r, n_s = reals.size, spoofs.size
    return (r_real - n_r * (n_r + 1) / 2.0) / (n_r * n_s)


def _roc_staircase(reals: np.ndarray, spoofs: np.ndarray):
    """Operating points swept over candidate thresholds.

    Candidates are the midpoints between consecutive distinct scores plus
    both extremes, so every achievable (APCER, BPCER) pair appears. Returns
    (apcer, bpcer, thresholds) with APCER descending from 1 and BPCER
    ascending to 1; the final all-spoof point carries threshold NaN since no
    scalar threshold in [0, 1] realizes it when the maximum score is 1.
    """
    scores = np.unique(np.concatenate([reals, spoofs]))
    mids = (scores[:-1] + scores[1:]) / 2.0
    thresholds = np.concatenate([[scores[0]], mids, [np.nan]])
    apcer = np.empty(thresholds.size)
    bpcer = np.empty(thresholds.size)
    for k, t in enumerate(thresholds):
        if np.isnan(t):
            apcer[k], bpcer[k] = 0.0, 1.0
        else:
            apcer[k] = float(np.mean(spoofs >= t))
            bpcer[k] = float(np.mean(reals < t))
    return apcer, bpcer, thresholds


def _convex_hull(apcer: np.ndarray, bpcer: np.ndarray):
    """Indices of the lower-left convex hull of the (APCER, BPCER) staircase.

    Points arrive with APCER descending; keep only vertices where the
    BPCER-per-APCER tradeoff stays convex (pop the middle point whenever it
    lies on or above the chord of its neighbors).
    """
    hull: list[int] = []
    for k in range(apcer.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (apcer[j] - apcer[i]) * (bpcer[k] - bpcer[i]) - (
                apcer[k] - apcer[i]
            ) * (bpcer[j] - bpcer[i])
            # with APCER decreasing, middle point j is above the i->k chord
            # when the cross product is >= 0
            if cross <= 0.0:
                break
            hull.pop()
        hull.append(k)
    return hull


def eer_and_hter(samples, threshold_policy="eer") -> tuple[float, float, float]:
    """(EER, threshold, HTER) under a threshold policy.

    EER interpolates the convex hull of the ROC staircase at the point where
    the two error rates cross, so HTER at the "eer" policy equals the EER.
    Policy "fixed" evaluates HTER at threshold 0.5; a float evaluates at
    that threshold. The EER value itself is policy-independent.
    """
    reals, spoofs = _split_scores(samples)
    apcer, bpcer, thresholds = _roc_staircase(reals, spoofs)
    hull = _convex_hull(apcer, bpcer)
    ha, hb, ht = apcer[hull], bpcer[hull], thresholds[hull]

    gap = ha - hb  # strictly decreasing from +1 to -1 along the hull
    k = int(np.searchsorted(-gap, 0.0, side="left"))
    if k == 0:
        eer, t_star = float(ha[0]), float(ht[0])
    elif k >= gap.size:
        eer, t_star = float(ha[-1]), float(ht[-1])
    else:
        denom = gap[k - 1] - gap[k]
        alpha = gap[k - 1] / denom if denom > 0.0 else 0.0
        eer = float(ha[k - 1] + alpha * (ha[k] - ha[k - 1]))
        lo, hi = ht[k - 1], ht[k]
        if np.isnan(hi):
            hi = 1.0
        if np.isnan(lo):
            lo = 1.0
        t_star = float(lo + alpha * (hi - lo))
    t_star = min(max(t_star, 0.0), 1.0)

    if threshold_policy == "eer":
        return eer, t_star, eer
    if threshold_policy == "fixed":
        threshold = 0.5
    elif isinstance(threshold_policy, (int, float)):
        threshold = float(threshold_policy)
    else:
        raise ValueError(f"unknown threshold policy {threshold_policy!r}")
    a, b, _ = error_rates(samples, threshold)
    return eer, threshold, (a + b) / 2.0


# -- protocols ------------------------------------------------------------------------


def build_protocol(
    manifests: EmbeddingStore | list[EmbeddingStore], spec: ProtocolSpec
) -> tuple[EmbeddingStore, EmbeddingStore]:
    """Slice manifest stores into (train, test) per the protocol.

    Train: source-domain rows labeled real with split train. Test:
    target-domain reals with split test, plus spoof rows of the held-out
    attack only (or every target spoof when no attack is withheld).
    """
    store = (
        manifests
        if isinstance(manifests, EmbeddingStore)
        else EmbeddingStore.concatenate(list(manifests))
    )
    domains = {m.domain for m in store.metas}
    for d in spec.source_domains + spec.target_domains:
        if d not in domains:
            raise ValueError(f"protocol references unknown domain {d!r}")
    if spec.held_out_attack is not None:
        attacks = {m.attack_type for m in store.metas if m.attack_type}
        if spec.held_out_attack not in attacks:
            raise ValueError(f"protocol references unknown attack type {spec.held_out_attack!r}")

    src = set(spec.source_domains)
    tgt = set(spec.target_domains)
    train_mask = [
        m.domain in src and m.label == "real" and m.split == "train" for m in store.metas
    ]
    test_mask = []
    for m in store.metas:
        if m.domain not in tgt:
            test_mask.append(False)
        elif m.label == "real":
            test_mask.append(m.split == "test")
        else:
            test_mask.append(
                spec.held_out_attack is None or m.attack_type == spec.held_out_attack
            )
    train = store.subset(np.array(train_mask))
    test = store.subset(np.array(test_mask))
    if len(train) == 0:
        raise ValueError(f"protocol {spec.name!r} produced an empty training split")
    if len(test) == 0:
        raise ValueError(f"protocol {spec.name!r} produced an empty test split")
    return train, test


@dataclass(frozen=True)
class EvalReport:
    """All rates for one protocol at one threshold policy.

    Rates are stored as fractions in [0, 1] and serialized as percentages
    with six decimal places.
    """

    protocol: str
    threshold_policy: str
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    auc: float
    eer: float
    hter: float
    n_real: int
    n_spoof: int
    seed: int
    config_hash: str

    def __post_init__(self):
        for name in ("apcer", "bpcer", "acer", "auc", "eer", "hter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if abs(self.acer - (self.apcer + self.bpcer) / 2.0) > 1e-12:
            raise ValueError("ACER must equal the mean of APCER and BPCER")

    def to_json_obj(self) -> dict:
        return {
            "protocol": self.protocol,
            "threshold_policy": self.threshold_policy,
            "threshold": round(self.threshold, 6),
            "apcer_pct": round(self.apcer * 100.0, 6),
            "bpcer_pct": round(self.bpcer * 100.0, 6),
            "acer_pct": round(self.acer * 100.0, 6),
            "auc_pct": round(self.auc * 100.0, 6),
            "eer_pct": round(self.eer * 100.0, 6),
            "hter_pct": round(self.hter * 100.0, 6),
            "counts": {"real": self.n_real, "spoof": self.n_spoof},
            "seed": self.seed,
            "config_hash": self.config_hash,
        }


def to_canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats fixed to six decimal places."""

    def convert(x):
        if isinstance(x, dict):
            return {k: convert(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [convert(v) for v in x]
        if isinstance(x, float):
            return float(f"{x:.6f}")
        return x

    return json.dumps(convert(obj), sort_keys=True, separators=(",", ":"))


@dataclass
class ProtocolResult:
    spec: ProtocolSpec
    reports: dict[str, EvalReport]
    scored: list[ScoredSample]
    fit_result: object

    def reports_json(self) -> str:
        return to_canonical_json({k: r.to_json_obj() for k, r in self.reports.items()})


def score_store(test: EmbeddingStore, fit_result, bank: PriorBank) -> list[ScoredSample]:
    """Score every test row with the trained prompts."""
    cfg: TrainConfig = fit_result.config
    enc = fit_result.encoder
    pset = fit_result.prompt_set
    e_r = enc.encode(pset.real.token_seq())
    e_s = overall_spoof_embedding(pset, bank, enc)
    f = test.as_float64()
    if cfg.normalize_embeddings:
        norms = np.linalg.norm(f, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize zero-norm test rows")
        f = f / norms[:, None]
    f_norms = np.linalg.norm(f, axis=1)
    s_r = (f @ e_r) / (f_norms * np.linalg.norm(e_r))
    s_s = (f @ e_s) / (f_norms * np.linalg.norm(e_s))
    gap = (s_r - s_s) / cfg.tau
    p_real = np.exp(-np.logaddexp(0.0, -gap))  # softmax over two similarities
    return [
        ScoredSample(id=m.id, p_real=float(p), label=m.label, attack_type=m.attack_type)
        for m, p in zip(test.metas, p_real)
    ]


def run_protocol(
    spec: ProtocolSpec,
    config: TrainConfig,
    stores: EmbeddingStore | list[EmbeddingStore],
    bank: PriorBank,
) -> ProtocolResult:
    """Train on the protocol's source reals, score its test split, and report
    at both the fixed-0.5 and the EER threshold policies."""
    train, test = build_protocol(stores, spec)
    fit_result = fit(config, train, bank)
    scored = score_store(test, fit_result, bank)

    auc_value = auc(scored)
    eer, t_eer, hter_eer = eer_and_hter(scored, "eer")
    counts = {
        "real": sum(1 for s in scored if s.label == "real"),
        "spoof": sum(1 for s in scored if s.label == "spoof"),
    }
    common = dict(
        protocol=spec.name, auc=auc_value, eer=eer,
        n_real=counts["real"], n_spoof=counts["spoof"],
        seed=config.seed, config_hash=config.config_hash(),
    )
    a5, b5, acer5 = error_rates(scored, 0.5)
    _, _, hter5 = eer_and_hter(scored, "fixed")
    reports = {
        "fixed": EvalReport(
            threshold_policy="fixed", threshold=0.5,
            apcer=a5, bpcer=b5, acer=acer5, hter=hter5, **common,
        ),
        # at the hull crossing both error rates equal the EER
        "eer": EvalReport(
            threshold_policy="eer", threshold=t_eer,
            apcer=eer, bpcer=eer, acer=eer, hter=hter_eer, **common,
        ),
    }
    return ProtocolResult(spec=spec, reports=reports, scored=scored, fit_result=fit_result)
