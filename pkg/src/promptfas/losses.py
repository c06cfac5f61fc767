"""The four prompt-learning regularizers and their weighted objective.

Per-sample terms (discrimination, contrastive hinge) are averaged over the
batch; the diversity and guidance terms have no sample dependence and enter
once per step. Gradients with respect to every prompt context vector are
assembled analytically: cotangents on the prompt embeddings are pulled back
through the frozen encoder's VJP, so the hinge contributes exactly zero
gradient whenever its bracket is non-positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import FrozenTextEncoder, pooling_weights
from .prompts import PriorBank, PromptSet, near_zero_prototype, prior_prototype
from .vecmath import as_vector, cosine_similarity, l2_distance

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "contrastive_loss",
    "diversity_loss",
    "guidance_loss",
    "discrimination_loss",
    "weighted_total",
    "total_loss",
    "total_loss_grad",
]


@dataclass(frozen=True)
class LossWeights:
    """Balance weights for the four terms plus margin and temperature."""

    lam_dc: float = 0.5
    lam_con: float = 1.0
    lam_div: float = 1.0
    lam_gui: float = 1.0
    eta: float = 2.0
    tau: float = 0.01

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.eta < 0.0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        for name in ("lam_dc", "lam_con", "lam_div", "lam_gui"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class LossBreakdown:
    """Per-term values (dc, con, div, gui), the weighted total, and optional
    per-term context-gradient norms."""

    dc: float
    con: float
    div: float
    gui: float
    total: float
    grad_norms: dict[str, float] | None = field(default=None)


def contrastive_loss(f_v, e_r, e_u, eta: float) -> float:
    """Hinge pushing the image farther from the spoof prototype than from the
    real prompt by at least ``eta``: max(d_real - d_spoof + eta, 0)."""
    if eta < 0.0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    d_real = l2_distance(f_v, e_r)
    d_spoof = l2_distance(f_v, e_u)
    return max(d_real - d_spoof + eta, 0.0)


def diversity_loss(embeddings) -> float:
    """Sum of pairwise cosines over ordered pairs of spoof-prompt embeddings.

    Each unordered pair is counted twice, matching the double sum it
    implements. A single embedding yields 0.
    """
    rows = np.stack([as_vector(e, f"embeddings[{i}]") for i, e in enumerate(embeddings)], axis=0)
    n = rows.shape[0]
    if n == 1:
        return 0.0
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("diversity_loss is undefined for zero-norm embeddings")
    unit = rows / norms[:, None]
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    return float(np.sum(sims) - np.sum(np.diag(sims)))


def guidance_loss(p_prior, p_unknown) -> float:
    """Distance between the prior-knowledge prototype and the unknown-prompt
    prototype. Warns when the prior prototype has collapsed to near zero."""
    p_prior = as_vector(p_prior, "p_prior")
    near_zero_prototype(p_prior, "prior")
    return l2_distance(p_prior, p_unknown)


def discrimination_loss(f_v, e_r, e_s, tau: float) -> float:
    """Cross entropy of the two-way real/spoof softmax, in the log domain.

    Finite for any inputs: -log p_real = log(1 + exp(-(s_r - s_s)/tau)).
    """
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    s_r = cosine_similarity(f_v, e_r)
    s_s = cosine_similarity(f_v, e_s)
    d = (s_r - s_s) / tau
    return float(np.logaddexp(0.0, -d))


def weighted_total(w: LossWeights, dc: float, con: float, div: float, gui: float) -> float:
    """The balanced objective: lam_dc*dc + lam_con*con + lam_div*div + lam_gui*gui."""
    return w.lam_dc * dc + w.lam_con * con + w.lam_div * div + w.lam_gui * gui


# -- batched forward and gradient ----------------------------------------------------


def _pooled_matrix(pset: PromptSet, prototype_row: bool) -> tuple[np.ndarray, np.ndarray]:
    """Pool every prompt (and optionally the mean-context prototype) in one batch.

    Returns (pooled (m, d_tok), coeff (n_tokens,)), where coeff holds the
    pooling weight of each token position; context grads reuse it.
    """
    ct = pset.class_tokens
    seq_len = pset.context_len + ct.shape[0]
    w = pooling_weights(seq_len)
    coeff = w / float(np.sum(w))
    ctx = pset.all_contexts()                      # (m0, L, d_tok), row 0 real
    class_part = coeff[pset.context_len:] @ ct     # shared by every prompt
    pooled = np.tensordot(ctx, coeff[: pset.context_len], axes=(1, 0)) + class_part
    if prototype_row:
        mean_ctx = np.mean(ctx[1:], axis=0)
        proto = coeff[: pset.context_len] @ mean_ctx + class_part
        pooled = np.concatenate([pooled, proto[None, :]], axis=0)
    return pooled, coeff


def _batch_stats(batch: np.ndarray, e: np.ndarray):
    """Cosines of every batch row against one embedding, plus the pieces the
    gradient needs. Works for non-unit ``e`` (prototype means)."""
    f_norms = np.linalg.norm(batch, axis=1)
    e_norm = float(np.linalg.norm(e))
    dots = batch @ e
    cos = dots / (f_norms * e_norm)
    return cos, dots, f_norms, e_norm


def _cos_cotangent(batch, coefs, cos, f_norms, e_norm, e):
    """d/d e of sum_i coefs_i * cos(f_i, e), for fixed batch rows f_i."""
    a = coefs / (f_norms * e_norm)
    b = float(np.sum(coefs * cos)) / (e_norm * e_norm)
    return a @ batch - b * e


def total_loss(
    batch: np.ndarray,
    pset: PromptSet,
    bank: PriorBank,
    weights: LossWeights,
    encoder: FrozenTextEncoder,
    prototype_mode: str = "prompt-space",
) -> LossBreakdown:
    """Forward-only evaluation of the four terms and their weighted total."""
    breakdown, _ = _forward(batch, pset, bank, weights, encoder, prototype_mode)
    return breakdown


def _forward(batch, pset, bank, weights, encoder, prototype_mode):
    if prototype_mode not in ("prompt-space", "embedding-space"):
        raise ValueError(f"unknown prototype_mode {prototype_mode!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise ValueError(f"batch must be a non-empty (B, d_emb) matrix, got {batch.shape}")
    if batch.shape[1] != encoder.d_emb:
        raise ValueError(f"batch dim {batch.shape[1]} != encoder d_emb {encoder.d_emb}")

    n_u = pset.n_unknown
    use_proto_row = prototype_mode == "prompt-space"
    pooled, coeff = _pooled_matrix(pset, prototype_row=use_proto_row)
    embs, cache = encoder.encode_pooled(pooled)

    e_r = embs[0]
    e_unknown = embs[1 : 1 + n_u]
    e_uproto = embs[-1] if use_proto_row else np.mean(e_unknown, axis=0)
    p_prior = prior_prototype(bank)
    e_s = (np.sum(e_unknown, axis=0) + np.sum(bank.embeddings, axis=0)) / float(
        n_u + bank.size
    )

    # discrimination: batch mean of -log softmax_real over (s_r, s_s)
    s_r, _, f_norms, er_norm = _batch_stats(batch, e_r)
    s_s, _, _, es_norm = _batch_stats(batch, e_s)
    dgap = (s_r - s_s) / weights.tau
    dc_terms = np.logaddexp(0.0, -dgap)
    dc = float(np.mean(dc_terms))

    # contrastive hinge: batch mean
    d_real = np.linalg.norm(batch - e_r, axis=1)
    d_spoof = np.linalg.norm(batch - e_uproto, axis=1)
    hinge = d_real - d_spoof + weights.eta
    active = hinge > 0.0
    con = float(np.mean(np.where(active, hinge, 0.0)))

    # diversity over ordered pairs (encoder outputs are unit rows)
    if n_u == 1:
        div = 0.0
        sims = None
    else:
        sims = np.clip(e_unknown @ e_unknown.T, -1.0, 1.0)
        div = float(np.sum(sims) - np.sum(np.diag(sims)))

    # prior guidance
    near_zero_prototype(p_prior, "prior")
    gui_vec = p_prior - e_uproto
    gui = float(np.linalg.norm(gui_vec))

    total = weighted_total(weights, dc, con, div, gui)
    breakdown = LossBreakdown(dc=dc, con=con, div=div, gui=gui, total=total)
    state = {
        "batch": batch, "pooled": pooled, "coeff": coeff, "cache": cache,
        "e_r": e_r, "e_unknown": e_unknown, "e_uproto": e_uproto, "e_s": e_s,
        "p_prior": p_prior, "s_r": s_r, "s_s": s_s, "dgap": dgap,
        "f_norms": f_norms, "er_norm": er_norm, "es_norm": es_norm,
        "d_real": d_real, "d_spoof": d_spoof, "active": active, "sims": sims,
        "use_proto_row": use_proto_row, "n_u": n_u,
    }
    return breakdown, state


def total_loss_grad(
    batch: np.ndarray,
    pset: PromptSet,
    bank: PriorBank,
    weights: LossWeights,
    encoder: FrozenTextEncoder,
    prototype_mode: str = "prompt-space",
    with_term_norms: bool = False,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss breakdown plus exact gradients for every context vector.

    Returns (breakdown, {"real": (L, d_tok), "unknown": (n_u, L, d_tok)}).
    With ``with_term_norms`` the breakdown also reports the context-gradient
    norm each term would have on its own (at unit weight).
    """
    breakdown, st = _forward(batch, pset, bank, weights, encoder, prototype_mode)
    n_u = st["n_u"]
    bsz = st["batch"].shape[0]

    # Cotangents on the embedding rows of the pooled forward pass, one stack
    # per term so per-term norms stay available. Row layout:
    # [real, unknown_0..unknown_{n_u-1}, (prototype row in prompt-space mode)].
    n_rows = st["pooled"].shape[0]
    d_emb = encoder.d_emb
    cot = {name: np.zeros((n_rows, d_emb)) for name in ("dc", "con", "div", "gui")}

    batch_f = st["batch"]
    f_norms = st["f_norms"]

    # discrimination: dL/ds_r = -p_spoof/tau, dL/ds_s = +p_spoof/tau per sample
    p_spoof = np.exp(-np.logaddexp(0.0, st["dgap"]))
    c_sr = -p_spoof / (weights.tau * bsz)
    c_ss = -c_sr
    cot["dc"][0] = _cos_cotangent(batch_f, c_sr, st["s_r"], f_norms, st["er_norm"], st["e_r"])
    cot_es = _cos_cotangent(batch_f, c_ss, st["s_s"], f_norms, st["es_norm"], st["e_s"])
    # e_s is the mean over n_u + n_prior members; prior members are frozen
    cot["dc"][1 : 1 + n_u] += cot_es[None, :] / float(n_u + bank.size)

    # contrastive hinge: subgradient 0 where the bracket is <= 0 or a distance
    # degenerates to 0
    active = st["active"]
    d_real = st["d_real"]
    d_spoof = st["d_spoof"]
    coef_r = np.where(active & (d_real > 0.0), 1.0 / np.maximum(d_real, 1e-300), 0.0) / bsz
    coef_u = np.where(active & (d_spoof > 0.0), 1.0 / np.maximum(d_spoof, 1e-300), 0.0) / bsz
    cot["con"][0] = float(np.sum(coef_r)) * st["e_r"] - coef_r @ batch_f
    cot_eup_con = coef_u @ batch_f - float(np.sum(coef_u)) * st["e_uproto"]

    # diversity: for unit rows, d/d e_i of the ordered-pair sum is
    # 2 * sum_{j != i} (e_j - cos_ij e_i)
    if n_u > 1:
        e_u = st["e_unknown"]
        sims = st["sims"]
        colsum = np.sum(e_u, axis=0)
        row_cos = np.sum(sims, axis=1) - np.diag(sims)
        cot["div"][1 : 1 + n_u] = 2.0 * ((colsum[None, :] - e_u) - row_cos[:, None] * e_u)

    # guidance: unit vector from the prior prototype toward the unknown prototype
    gui_gap = st["e_uproto"] - st["p_prior"]
    gnorm = float(np.linalg.norm(gui_gap))
    cot_eup_gui = gui_gap / gnorm if gnorm > 0.0 else np.zeros(d_emb)

    # route the unknown-prototype cotangents per mode
    if st["use_proto_row"]:
        cot["con"][-1] = cot_eup_con
        cot["gui"][-1] = cot_eup_gui
    else:
        cot["con"][1 : 1 + n_u] += cot_eup_con[None, :] / float(n_u)
        cot["gui"][1 : 1 + n_u] += cot_eup_gui[None, :] / float(n_u)

    lam = {"dc": weights.lam_dc, "con": weights.lam_con,
           "div": weights.lam_div, "gui": weights.lam_gui}
    combined = sum(lam[name] * cot[name] for name in cot)
    grads = _pull_back(combined, st, pset, encoder)

    if with_term_norms:
        norms = {}
        for name in cot:
            g = _pull_back(cot[name], st, pset, encoder)
            norms[name] = float(
                np.sqrt(np.sum(g["real"] ** 2) + np.sum(g["unknown"] ** 2))
            )
        breakdown.grad_norms = norms
    return breakdown, grads


def _pull_back(cotangents, st, pset, encoder):
    """VJP through the shared pooled forward pass, then into context rows."""
    gp = encoder.vjp_pooled(st["cache"], cotangents)
    ctx_coeff = st["coeff"][: pset.context_len]
    n_u = st["n_u"]
    grad_real = ctx_coeff[:, None] * gp[0][None, :]
    grad_unknown = ctx_coeff[None, :, None] * gp[1 : 1 + n_u][:, None, :]
    if st["use_proto_row"]:
        shared = (ctx_coeff[:, None] * gp[-1][None, :]) / float(n_u)
        grad_unknown = grad_unknown + shared[None, :, :]
    return {"real": grad_real, "unknown": grad_unknown}
