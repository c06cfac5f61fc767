"""Command-line pipeline: data generation, training, evaluation, reporting,
prompt export, and the gradient gate.

Exit codes: 0 success, 2 bad flags or usage, 3 missing file, 4 invalid
config or schema, 5 embedding file format error, 6 gradient check failure,
1 any other runtime error. Errors print one machine-parsable line to
stderr: ``error: <code>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, prompts, synthetic
from .encoders import ToyTextEncoder, tokenize
from .store import (
    EmbeddingFileError,
    EmbeddingStore,
    RecordMeta,
    read_embeddings,
    write_embeddings,
)
from .trainer import GRADCHECK_CONFIG, TrainConfig, fit, grad_check

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_BAD_FORMAT = 5
EXIT_GRADCHECK_FAILED = 6

_EPILOG = """exit codes:
  0  success
  1  unexpected runtime error
  2  bad flags / usage
  3  referenced file does not exist
  4  invalid configuration or schema violation
  5  embedding/prompt file format error
  6  gradient check exceeded tolerance
"""

# TrainConfig fields exposed as flags; config file values sit between
# defaults and flags in precedence.
_CONFIG_FLAGS = {
    "seed": int, "epochs": int, "batch_size": int,
    "lr": float, "tau": float, "eta": float,
    "nu": int, "context_len": int,
    "lambda1": float, "lambda2": float, "lambda3": float, "lambda4": float,
    "prototype_mode": str, "normalize_embeddings": int,
}
_FLAG_TO_FIELD = {
    "lr": "lr0", "nu": "n_unknown",
    "lambda1": "lam_dc", "lambda2": "lam_con", "lambda3": "lam_div", "lambda4": "lam_gui",
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--tau", type=float, help="softmax temperature")
    p.add_argument("--eta", type=float, help="contrastive margin")
    p.add_argument("--nu", type=int, help="number of unknown spoof prompts")
    p.add_argument("--context-len", dest="context_len", type=int)
    p.add_argument("--lambda1", type=float, help="discrimination weight")
    p.add_argument("--lambda2", type=float, help="contrastive weight")
    p.add_argument("--lambda3", type=float, help="diversity weight")
    p.add_argument("--lambda4", type=float, help="guidance weight")
    p.add_argument("--prototype-mode", dest="prototype_mode",
                   choices=("prompt-space", "embedding-space"))
    p.add_argument("--normalize-embeddings", dest="normalize_embeddings",
                   type=int, choices=(0, 1))


def _resolve_config(args) -> TrainConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(EXIT_MISSING_FILE, f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as e:
            raise CliError(EXIT_BAD_CONFIG, f"config is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise CliError(EXIT_BAD_CONFIG, "config root must be a JSON object")
        values.update(loaded)
    for flag in _CONFIG_FLAGS:
        v = getattr(args, flag, None)
        if v is not None:
            values[_FLAG_TO_FIELD.get(flag, flag)] = v
    if "normalize_embeddings" in values:
        values["normalize_embeddings"] = bool(values["normalize_embeddings"])
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_BAD_CONFIG, f"invalid config: {e}")


def _read_store(path_str: str, manifest: str | None = None) -> EmbeddingStore:
    path = Path(path_str)
    if not path.exists():
        raise CliError(EXIT_MISSING_FILE, f"embeddings file not found: {path}")
    if manifest is not None and not Path(manifest).exists():
        raise CliError(EXIT_MISSING_FILE, f"manifest file not found: {manifest}")
    try:
        return read_embeddings(path, meta_path=manifest)
    except EmbeddingFileError as e:
        raise CliError(EXIT_BAD_FORMAT, str(e))


def _build_bank(config: TrainConfig, priors_path: str | None) -> prompts.PriorBank:
    if priors_path is not None and not Path(priors_path).exists():
        raise CliError(EXIT_MISSING_FILE, f"priors file not found: {priors_path}")
    encoder = ToyTextEncoder(seed=config.encoder_seed, d_tok=config.d_tok,
                             d_hid=config.d_hid, d_emb=config.d_emb)
    descriptions = prompts.load_prior_descriptions(priors_path)
    return prompts.build_prior_bank(encoder, descriptions, config.vocab_seed)


def _resolve_protocol(arg: str | None) -> evaluation.ProtocolSpec:
    if arg is None or arg == "synthetic-default":
        return evaluation.ProtocolSpec(
            name="synthetic-default", source_domains=("source",),
            target_domains=("target",), held_out_attack=None, mode="cross_domain",
        )
    if arg.startswith("loo:"):
        attack = arg.split(":", 1)[1]
        return evaluation.ProtocolSpec(
            name=f"loo_{attack}", source_domains=("source",),
            target_domains=("target",), held_out_attack=attack, mode="cross_domain",
        )
    path = Path(arg)
    if not path.exists():
        raise CliError(EXIT_MISSING_FILE, f"protocol file not found: {path}")
    try:
        obj = json.loads(path.read_text("utf-8"))
        return evaluation.ProtocolSpec(
            name=obj["name"],
            source_domains=tuple(obj["source_domains"]),
            target_domains=tuple(obj["target_domains"]),
            held_out_attack=obj.get("held_out_attack"),
            mode=obj.get("mode", "cross_domain"),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_BAD_CONFIG, f"invalid protocol file {path}: {e}")


def _write_resolved_config(out_dir: Path, config: TrainConfig, extra: dict) -> None:
    resolved = dict(config.to_dict())
    resolved.update(extra)
    resolved["config_hash"] = config.config_hash()
    (out_dir / "resolved_config.json").write_text(
        evaluation.to_canonical_json(resolved) + "\n", "utf-8"
    )


def _load_layout(path_str: str | None) -> synthetic.BenchmarkLayout:
    if path_str is None:
        return synthetic.DEFAULT_BENCHMARK
    path = Path(path_str)
    if not path.exists():
        raise CliError(EXIT_MISSING_FILE, f"benchmark spec not found: {path}")
    try:
        obj = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise CliError(EXIT_BAD_CONFIG, f"benchmark spec is not valid JSON: {e}")
    import dataclasses

    known = {f.name for f in dataclasses.fields(synthetic.BenchmarkLayout)}
    unknown = set(obj) - known
    if unknown:
        raise CliError(EXIT_BAD_CONFIG, f"unknown benchmark spec keys: {sorted(unknown)}")
    for key in ("attack_angles_deg", "prior_alignment"):
        if key in obj:
            obj[key] = tuple(obj[key])
    try:
        return synthetic.BenchmarkLayout(**obj)
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_BAD_CONFIG, f"invalid benchmark spec: {e}")


def _cmd_gen_data(args) -> int:
    config = _resolve_config(args)
    layout = _load_layout(args.spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store, spec = synthetic.default_benchmark(config.seed, layout)
    write_embeddings(store, out)
    import dataclasses

    resolved = dict(config.to_dict())
    resolved.update({"command": "gen-data", "config_hash": config.config_hash(),
                     "benchmark_layout": dataclasses.asdict(layout)})
    Path(str(out) + ".config.json").write_text(
        evaluation.to_canonical_json(resolved) + "\n", "utf-8"
    )
    spec_path = out.with_suffix(out.suffix + ".protocol.json")
    spec_path.write_text(
        evaluation.to_canonical_json({
            "name": spec.name,
            "source_domains": list(spec.source_domains),
            "target_domains": list(spec.target_domains),
            "held_out_attack": spec.held_out_attack,
            "mode": spec.mode,
        }) + "\n",
        "utf-8",
    )
    print(f"wrote {len(store)} embeddings (dim {store.dim}) to {out}")
    print(f"wrote protocol spec to {spec_path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    store = _read_store(args.embeddings, args.manifest)
    bank = _build_bank(config, args.priors)
    train_rows = store.subset(np.array(
        [m.label == "real" and m.split == "train" for m in store.metas]
    ))
    try:
        result = fit(config, train_rows, bank)
    except ValueError as e:
        raise CliError(EXIT_BAD_CONFIG, str(e))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    prompts.write_prompt_set(result.prompt_set, out_dir / "prompts.fase")
    (out_dir / "train_log.json").write_text(
        evaluation.to_canonical_json(result.log) + "\n", "utf-8"
    )
    _write_resolved_config(out_dir, config, {"command": "train", "embeddings": args.embeddings})
    print(f"trained {config.epochs} epochs, final total loss {result.log[-1]['total']:.6f}")
    print(f"wrote checkpoint and log to {out_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _resolve_config(args)
    store = _read_store(args.embeddings, args.manifest)
    bank = _build_bank(config, args.priors)
    spec = _resolve_protocol(args.protocol)
    try:
        result = evaluation.run_protocol(spec, config, store, bank)
    except ValueError as e:
        raise CliError(EXIT_BAD_CONFIG, str(e))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    policies = ("fixed", "eer") if args.threshold_policy == "both" else (args.threshold_policy,)
    report_obj = {k: result.reports[k].to_json_obj() for k in policies}
    (out_dir / "report.json").write_text(
        evaluation.to_canonical_json(report_obj) + "\n", "utf-8"
    )
    prompts.write_prompt_set(result.fit_result.prompt_set, out_dir / "prompts.fase")
    (out_dir / "train_log.json").write_text(
        evaluation.to_canonical_json(result.fit_result.log) + "\n", "utf-8"
    )
    _write_resolved_config(out_dir, config, {
        "command": "eval", "embeddings": args.embeddings, "protocol": spec.name,
    })
    for k in policies:
        r = result.reports[k]
        print(
            f"{spec.name} [{k}] ACER {r.acer * 100:.2f}% AUC {r.auc * 100:.2f}% "
            f"HTER {r.hter * 100:.2f}% EER {r.eer * 100:.2f}%"
        )
    print(f"wrote report to {out_dir / 'report.json'}")
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = []
    for path_str in args.inputs:
        path = Path(path_str)
        if not path.exists():
            raise CliError(EXIT_MISSING_FILE, f"report not found: {path}")
        try:
            obj = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as e:
            raise CliError(EXIT_BAD_FORMAT, f"invalid report JSON {path}: {e}")
        for policy, rep in sorted(obj.items()):
            rows.append({
                "file": str(path), "policy": policy,
                "protocol": rep["protocol"], "seed": rep["seed"],
                "apcer_pct": rep["apcer_pct"], "bpcer_pct": rep["bpcer_pct"],
                "acer_pct": rep["acer_pct"], "auc_pct": rep["auc_pct"],
                "eer_pct": rep["eer_pct"], "hter_pct": rep["hter_pct"],
            })
    if not rows:
        raise CliError(EXIT_BAD_CONFIG, "no report rows found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = ("apcer_pct", "bpcer_pct", "acer_pct", "auc_pct", "eer_pct", "hter_pct")
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    summary: dict = {}
    for policy in sorted({r["policy"] for r in rows}):
        sel = [r for r in rows if r["policy"] == policy]
        summary[policy] = {m: float(np.mean([r[m] for r in sel])) for m in metrics}
        summary[policy]["n_reports"] = len(sel)
    (out / "summary.json").write_text(evaluation.to_canonical_json(summary) + "\n", "utf-8")
    print(f"aggregated {len(rows)} report rows into {out}")
    return EXIT_OK


def _cmd_export_prompts(args) -> int:
    config = _resolve_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliError(EXIT_MISSING_FILE, f"checkpoint not found: {ckpt}")
    encoder = ToyTextEncoder(seed=config.encoder_seed, d_tok=config.d_tok,
                             d_hid=config.d_hid, d_emb=config.d_emb)
    class_tokens = tokenize(config.class_name, config.vocab_seed, config.d_tok)
    try:
        pset = prompts.load_prompt_set(ckpt, class_tokens)
    except EmbeddingFileError as e:
        raise CliError(EXIT_BAD_FORMAT, str(e))
    rows = [encoder.encode(pset.real.token_seq())]
    ids = ["prompt:real"]
    for i, p in enumerate(pset.unknown):
        rows.append(encoder.encode(p.token_seq()))
        ids.append(f"prompt:unknown_{i}")
    store = EmbeddingStore(
        encoder.d_emb,
        np.stack(rows).astype(np.float32),
        [RecordMeta(id=i, label="real" if i.endswith("real") else "spoof",
                    attack_type=None, domain="prompts", split="test") for i in ids],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(store, out)
    resolved = dict(config.to_dict())
    resolved.update({"command": "export-prompts", "checkpoint": str(ckpt),
                     "config_hash": config.config_hash()})
    Path(str(out) + ".config.json").write_text(
        evaluation.to_canonical_json(resolved) + "\n", "utf-8"
    )
    print(f"wrote {len(store)} prompt embeddings to {out}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    tol = 1e-4
    # reduced toy dims by default; any explicit config switches to the
    # resolved training configuration
    overridden = args.config is not None or any(
        getattr(args, flag, None) is not None for flag in _CONFIG_FLAGS if flag != "seed"
    )
    cfg = _resolve_config(args) if overridden else GRADCHECK_CONFIG
    worst = 0.0
    coord_count = 0
    for seed in range(args.seeds):
        report = grad_check(cfg, seed=seed)
        worst = max(worst, report.max_rel_error)
        coord_count = report.coord_count
    print(
        f"grad-check: max relative error {worst:.3e} over {coord_count} coordinates "
        f"x {args.seeds} seeds (tolerance {tol:.0e})"
    )
    if worst >= tol:
        raise CliError(EXIT_GRADCHECK_FAILED, f"gradient check failed: {worst:.3e} >= {tol:.0e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptfas",
        description="One-class spoof-prompt optimization over frozen embedding spaces",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--spec", help="benchmark layout JSON (defaults to the stock layout)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="fit prompts on real-only training rows")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", help="metadata sidecar override (default: <embeddings>.meta.jsonl)")
    p.add_argument("--priors", help="prior description text file (default: bundled)")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="train on a protocol and report metrics")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", help="metadata sidecar override (default: <embeddings>.meta.jsonl)")
    p.add_argument("--priors")
    p.add_argument("--protocol", help="synthetic-default, loo:<attack>, or a JSON file")
    p.add_argument("--threshold-policy", choices=("fixed", "eer", "both"), default="both")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="aggregate report JSONs into CSV/JSON summaries")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("export-prompts", help="encode a checkpoint into an embedding file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_export_prompts)

    p = sub.add_parser("grad-check", help="finite-difference gradient gate")
    p.add_argument("--seeds", type=int, default=5)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # keep the one-line machine-parsable contract
        print(f"error: {EXIT_RUNTIME}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
