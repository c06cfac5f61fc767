"""Acceptance gate: every release criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. The synthetic end-to-end runs (5 seeds x 3 loss variants) are
shared by several criteria through a module fixture.
"""

import time

import numpy as np
import pytest

from promptfas.encoders import ToyTextEncoder
from promptfas.evaluation import auc, eer_and_hter, error_rates, run_protocol
from promptfas.losses import (
    LossWeights,
    contrastive_loss,
    discrimination_loss,
    diversity_loss,
    guidance_loss,
    weighted_total,
)
from promptfas.prompts import build_prior_bank, load_prior_descriptions, overall_spoof_embedding
from promptfas.synthetic import default_benchmark
from promptfas.trainer import GRADCHECK_CONFIG, TrainConfig, grad_check
from promptfas.vecmath import normalize

SEEDS = (0, 1, 2, 3, 4)


def report_line(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] {name}: {status} {detail}")


@pytest.fixture(scope="module")
def benchmark_runs():
    """5 seeds x (full, no-diversity, no-discrimination) on the default
    benchmark with the reference hyperparameters."""
    base = TrainConfig()
    enc = ToyTextEncoder(seed=base.encoder_seed, d_tok=base.d_tok,
                         d_hid=base.d_hid, d_emb=base.d_emb)
    bank = build_prior_bank(enc, load_prior_descriptions(), base.vocab_seed)
    runs = {"full": [], "no_div": [], "no_dc": []}
    full_elapsed = 0.0
    for seed in SEEDS:
        store, spec = default_benchmark(seed)
        train_rows = store.subset(np.array([m.split == "train" for m in store.metas]))
        for variant, overrides in (
            ("full", {}),
            ("no_div", {"lam_div": 0.0}),
            ("no_dc", {"lam_dc": 0.0}),
        ):
            cfg = base.with_overrides(seed=seed, **overrides)
            t0 = time.perf_counter()
            result = run_protocol(spec, cfg, store, bank)
            elapsed = time.perf_counter() - t0
            if variant == "full":
                full_elapsed += elapsed
            runs[variant].append(
                {"result": result, "train": train_rows, "bank": bank, "enc": enc}
            )
    return runs, full_elapsed, bank, enc


def mean_pairwise_cos(run):
    fr = run["result"].fit_result
    enc = fr.encoder
    embs = np.stack([enc.encode(p.token_seq()) for p in fr.prompt_set.unknown])
    sims = embs @ embs.T
    n = embs.shape[0]
    return float((np.sum(sims) - np.trace(sims)) / (n * (n - 1)))


class TestGradientCorrectness:
    def test_gradient_correctness(self):
        t0 = time.perf_counter()
        worst = 0.0
        coords = None
        for seed in SEEDS:
            report = grad_check(GRADCHECK_CONFIG, seed=seed, h=1e-5)
            worst = max(worst, report.max_rel_error)
            coords = report.coord_count
        elapsed = time.perf_counter() - t0
        expected_coords = (
            (GRADCHECK_CONFIG.n_unknown + 1)
            * GRADCHECK_CONFIG.context_len
            * GRADCHECK_CONFIG.d_tok
        )
        ok = worst < 1e-4 and coords == expected_coords and elapsed < 10.0
        report_line(
            "gradient-correctness",
            ok,
            f"(max rel err {worst:.2e}, {coords} coords x {len(SEEDS)} seeds, {elapsed:.2f}s)",
        )
        assert worst < 1e-4
        assert coords == expected_coords
        assert elapsed < 10.0


class TestLossValueOracle:
    def test_loss_value_oracle(self):
        tol = 1e-9
        zero2 = np.zeros(2)

        # contrastive hinge
        assert contrastive_loss(zero2, [1, 0], [0, 1], 2.0) == pytest.approx(2.0, abs=tol)
        assert contrastive_loss(zero2, [0.5, 0], [3.0, 0], 2.0) == pytest.approx(0.0, abs=tol)
        assert contrastive_loss(zero2, [1.0, 0], [3.0, 0], 2.0) == pytest.approx(0.0, abs=tol)

        # diversity
        e = normalize([1.0, 2.0, 3.0])
        assert diversity_loss([e, e]) == pytest.approx(2.0, abs=tol)
        assert diversity_loss(np.eye(4)) == pytest.approx(0.0, abs=tol)
        a = np.array([1.0, 0.0, 0.0])
        b = np.array([0.5, np.sqrt(0.75), 0.0])
        cx = 0.5
        cy = (0.5 - cx * 0.5) / np.sqrt(0.75)
        c = np.array([cx, cy, np.sqrt(1 - cx**2 - cy**2)])
        assert diversity_loss([a, b, c]) == pytest.approx(3.0, abs=tol)

        # guidance (the zero prior prototype is flagged, not fatal)
        p = np.array([0.1, 0.2, 0.3])
        assert guidance_loss(p, p) == pytest.approx(0.0, abs=tol)
        with pytest.warns(UserWarning, match="near-zero"):
            assert guidance_loss([0, 0], [3, 4]) == pytest.approx(5.0, abs=tol)

        # discrimination
        f = np.array([1.0, 0.0])
        mid = np.array([np.sqrt(0.5), np.sqrt(0.5)])
        assert discrimination_loss(f, mid, mid, 0.7) == pytest.approx(np.log(2.0), abs=tol)
        assert discrimination_loss(f, f, np.array([0.0, 1.0]), 1.0) == pytest.approx(
            0.3132616875182228, abs=tol
        )
        c9 = np.array([0.9, np.sqrt(1 - 0.81)])
        c1 = np.array([0.1, np.sqrt(1 - 0.01)])
        deep = discrimination_loss(f, c9, c1, 0.01)
        assert np.isfinite(deep)
        assert deep == pytest.approx(np.exp(-80.0), abs=tol)

        # weighted objective
        w = LossWeights(lam_dc=0.5, lam_con=1.0, lam_div=1.0, lam_gui=1.0)
        assert weighted_total(w, 0.6, 2.0, 1.0, 0.5) == pytest.approx(3.8, abs=tol)

        report_line("loss-value-oracle", True, "(all derived examples at 1e-9)")


def brute_force_auc(reals, spoofs):
    """Independent pair-counting oracle, ties worth one half."""
    wins = 0.0
    for r in reals:
        for s in spoofs:
            if r > s:
                wins += 1.0
            elif r == s:
                wins += 0.5
    return wins / (len(reals) * len(spoofs))


class TestMetricOracle:
    def test_metric_oracle(self):
        from promptfas.evaluation import ScoredSample as SS

        rng = np.random.Generator(np.random.PCG64(2024))
        worst = 0.0
        for _ in range(1000):
            n_r = int(rng.integers(1, 51))
            n_s = int(rng.integers(1, 51))
            grid = int(rng.integers(2, 12))
            reals = rng.integers(0, grid + 1, size=n_r) / grid
            spoofs = rng.integers(0, grid + 1, size=n_s) / grid
            expected = brute_force_auc(list(reals), list(spoofs))
            scored = [SS(f"r{i}", p, "real") for i, p in enumerate(reals)]
            scored += [SS(f"s{i}", p, "spoof") for i, p in enumerate(spoofs)]
            worst = max(worst, abs(auc(scored) - expected))
        assert worst < 1e-12

        # 4-sample worked example
        from promptfas.evaluation import ScoredSample

        scored = [
            ScoredSample("r0", 0.9, "real"), ScoredSample("r1", 0.4, "real"),
            ScoredSample("s0", 0.6, "spoof"), ScoredSample("s1", 0.1, "spoof"),
        ]
        assert auc(scored) == pytest.approx(0.75, abs=1e-12)
        apcer, bpcer, acer = error_rates(scored, 0.5)
        assert (apcer, bpcer, acer) == (0.5, 0.5, 0.5)
        eer, _, hter = eer_and_hter(scored, "eer")
        assert eer == pytest.approx(0.25, abs=1e-12)
        assert hter == pytest.approx(0.25, abs=1e-12)
        report_line("metric-oracle", True, f"(1000 AUC sets, worst gap {worst:.1e})")


class TestSyntheticEndToEnd:
    def test_synthetic_end_to_end(self, benchmark_runs):
        runs, full_elapsed, _, _ = benchmark_runs
        aucs = [r["result"].reports["eer"].auc for r in runs["full"]]
        acers = [r["result"].reports["eer"].acer for r in runs["full"]]
        mean_auc, mean_acer = float(np.mean(aucs)), float(np.mean(acers))
        ok = mean_auc >= 0.95 and mean_acer <= 0.10 and full_elapsed < 120.0
        report_line(
            "synthetic-end-to-end",
            ok,
            f"(mean AUC {mean_auc:.4f}, mean ACER {mean_acer * 100:.2f}%, {full_elapsed:.1f}s)",
        )
        assert mean_auc >= 0.95
        assert mean_acer <= 0.10
        assert full_elapsed < 120.0


class TestAblationDirection:
    def test_ablation_diversity(self, benchmark_runs):
        runs, _, _, _ = benchmark_runs
        cos_full = float(np.mean([mean_pairwise_cos(r) for r in runs["full"]]))
        cos_no_div = float(np.mean([mean_pairwise_cos(r) for r in runs["no_div"]]))
        acer_full = float(np.mean([r["result"].reports["eer"].acer for r in runs["full"]]))
        acer_no_div = float(np.mean([r["result"].reports["eer"].acer for r in runs["no_div"]]))
        raised = cos_no_div - cos_full
        ok = raised >= 0.1 and acer_no_div >= acer_full
        report_line(
            "ablation-diversity",
            ok,
            f"(pairwise cos +{raised:.3f}, ACER {acer_full * 100:.2f}% -> {acer_no_div * 100:.2f}%)",
        )
        assert raised >= 0.1
        assert acer_no_div >= acer_full  # removing diversity must not help

    def test_ablation_discrimination(self, benchmark_runs):
        runs, _, _, _ = benchmark_runs
        acer_full = float(np.mean([r["result"].reports["eer"].acer for r in runs["full"]]))
        acer_no_dc = float(np.mean([r["result"].reports["eer"].acer for r in runs["no_dc"]]))
        ok = acer_no_dc > acer_full
        report_line(
            "ablation-discrimination",
            ok,
            f"(ACER {acer_full * 100:.2f}% -> {acer_no_dc * 100:.2f}% without the term)",
        )
        assert acer_no_dc > acer_full  # removing the one-class term must strictly hurt


class TestOneClassMargin:
    def test_one_class_margin(self, benchmark_runs):
        runs, _, bank, enc = benchmark_runs
        fractions = []
        for run in runs["full"]:
            fr = run["result"].fit_result
            e_r = enc.encode(fr.prompt_set.real.token_seq())
            e_s = overall_spoof_embedding(fr.prompt_set, bank, enc)
            f = run["train"].as_float64()
            f /= np.linalg.norm(f, axis=1)[:, None]
            d_real = np.linalg.norm(f - e_r, axis=1)
            d_spoof = np.linalg.norm(f - e_s, axis=1)
            fractions.append(float(np.mean(d_spoof > d_real)))
        ok = all(frac >= 0.95 for frac in fractions)
        report_line(
            "one-class-margin", ok,
            f"(per-seed fractions {[f'{x:.3f}' for x in fractions]})",
        )
        for frac in fractions:
            assert frac >= 0.95


class TestDeterminism:
    def test_determinism(self, benchmark_runs):
        import tempfile
        from pathlib import Path

        from promptfas.prompts import write_prompt_set

        _, _, bank, _ = benchmark_runs
        cfg = TrainConfig(seed=0, epochs=3)
        store, spec = default_benchmark(0)
        payloads = []
        for _ in range(2):
            result = run_protocol(spec, cfg, store, bank)
            with tempfile.TemporaryDirectory() as d:
                ckpt = Path(d) / "prompts.fase"
                write_prompt_set(result.fit_result.prompt_set, ckpt)
                payloads.append((result.reports_json(), ckpt.read_bytes()))
        ok = payloads[0] == payloads[1]
        report_line("determinism", ok, "(report JSON and checkpoint bytes)")
        assert payloads[0][0] == payloads[1][0]
        assert payloads[0][1] == payloads[1][1]


class TestOrthogonalInvariance:
    def test_orthogonal_invariance(self):
        rng = np.random.Generator(np.random.PCG64(99))
        dim = 16
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        f = normalize(rng.standard_normal(dim))
        e_r = normalize(rng.standard_normal(dim))
        e_u = normalize(rng.standard_normal(dim))
        e_s = rng.standard_normal(dim) * 0.4
        p_prior = rng.standard_normal(dim) * 0.6
        embs = rng.standard_normal((6, dim))
        embs /= np.linalg.norm(embs, axis=1)[:, None]

        checks = [
            (contrastive_loss(f, e_r, e_u, 2.0), contrastive_loss(q @ f, q @ e_r, q @ e_u, 2.0)),
            (discrimination_loss(f, e_r, e_s, 0.01), discrimination_loss(q @ f, q @ e_r, q @ e_s, 0.01)),
            (diversity_loss(embs), diversity_loss(embs @ q.T)),
            (guidance_loss(p_prior, e_u), guidance_loss(q @ p_prior, q @ e_u)),
        ]
        worst = max(abs(a - b) for a, b in checks)

        from promptfas.evaluation import ScoredSample

        def score_set(points):
            # AUC from rotated embeddings against rotated anchors: cosine
            # similarities are preserved, so the scores are identical
            return [
                ScoredSample(f"x{i}", float(np.clip((p + 1) / 2, 0, 1)), lab)
                for i, (p, lab) in enumerate(points)
            ]

        base_points = [(float(f2 @ e_r), "real") for f2 in embs[:3]] + [
            (float(f2 @ e_u), "spoof") for f2 in embs[3:]
        ]
        rot_points = [(float((q @ f2) @ (q @ e_r)), "real") for f2 in embs[:3]] + [
            (float((q @ f2) @ (q @ e_u)), "spoof") for f2 in embs[3:]
        ]
        auc_gap = abs(auc(score_set(base_points)) - auc(score_set(rot_points)))
        worst = max(worst, auc_gap)
        ok = worst < 1e-9
        report_line("orthogonal-invariance", ok, f"(worst deviation {worst:.1e})")
        assert worst < 1e-9
