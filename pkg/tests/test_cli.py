import json

import pytest

from promptfas.cli import (
    EXIT_BAD_CONFIG,
    EXIT_MISSING_FILE,
    EXIT_OK,
    main,
)
from promptfas.store import read_embeddings

FAST = ["--epochs", "2", "--nu", "3", "--context-len", "4"]


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    emb = out / "bench.fase"
    assert main(["gen-data", "--out", str(emb), "--seed", "0"]) == EXIT_OK
    return emb


class TestGenData:
    def test_output_readable(self, bench):
        store = read_embeddings(bench)
        assert len(store) == 3400
        assert store.dim == 64

    def test_protocol_sidecar_written(self, bench):
        spec = json.loads((bench.parent / "bench.fase.protocol.json").read_text())
        assert spec["name"] == "synthetic-default"

    def test_resolved_config_written_and_reproducible(self, bench, tmp_path):
        resolved = json.loads((bench.parent / "bench.fase.config.json").read_text())
        assert resolved["seed"] == 0 and "config_hash" in resolved
        assert resolved["benchmark_layout"]["source_reals"] == 2000
        again = tmp_path / "again.fase"
        assert main(["gen-data", "--out", str(again), "--seed", "0"]) == EXIT_OK
        assert again.read_bytes() == bench.read_bytes()

    def test_custom_layout_spec(self, tmp_path):
        spec = tmp_path / "layout.json"
        spec.write_text(json.dumps({
            "source_reals": 50, "target_reals": 20, "attack_count": 10,
        }))
        out = tmp_path / "tiny.fase"
        assert main(["gen-data", "--out", str(out), "--spec", str(spec)]) == EXIT_OK
        assert len(read_embeddings(out)) == 50 + 20 + 3 * 10

    def test_unknown_layout_key_rejected(self, tmp_path, capsys):
        spec = tmp_path / "layout.json"
        spec.write_text(json.dumps({"cluster_size": 10}))
        code = main(["gen-data", "--out", str(tmp_path / "x.fase"), "--spec", str(spec)])
        assert code == EXIT_BAD_CONFIG
        assert "unknown benchmark spec keys" in capsys.readouterr().err


class TestTrain:
    def test_train_writes_artifacts(self, bench, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--embeddings", str(bench), "--out", str(out), *FAST])
        assert code == EXIT_OK
        assert (out / "prompts.fase").exists()
        assert (out / "train_log.json").exists()
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["epochs"] == 2
        assert resolved["n_unknown"] == 3

    def test_manifest_override(self, bench, tmp_path):
        import shutil

        alt = tmp_path / "alt.meta.jsonl"
        shutil.copy(str(bench) + ".meta.jsonl", alt)
        out = tmp_path / "run"
        code = main(["train", "--embeddings", str(bench), "--manifest", str(alt),
                     "--out", str(out), *FAST])
        assert code == EXIT_OK

    def test_missing_embeddings_file(self, tmp_path, capsys):
        code = main(["train", "--embeddings", str(tmp_path / "nope.fase"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_MISSING_FILE
        assert "error: 3:" in capsys.readouterr().err


class TestEval:
    def test_eval_deterministic_bytes(self, bench, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["eval", "--embeddings", str(bench), "--out", str(out),
                         "--seed", "0", *FAST])
            assert code == EXIT_OK
            outs.append((out / "report.json").read_bytes())
            prompt_bytes = (out / "prompts.fase").read_bytes()
            outs.append(prompt_bytes)
        assert outs[0] == outs[2]
        assert outs[1] == outs[3]

    def test_report_contains_both_policies(self, bench, tmp_path):
        out = tmp_path / "rep"
        main(["eval", "--embeddings", str(bench), "--out", str(out), *FAST])
        report = json.loads((out / "report.json").read_text())
        assert set(report) == {"fixed", "eer"}
        assert report["eer"]["protocol"] == "synthetic-default"

    def test_threshold_policy_flag(self, bench, tmp_path):
        out = tmp_path / "single"
        main(["eval", "--embeddings", str(bench), "--out", str(out),
              "--threshold-policy", "eer", *FAST])
        report = json.loads((out / "report.json").read_text())
        assert set(report) == {"eer"}

    def test_rerun_from_resolved_config_reproduces(self, bench, tmp_path):
        first = tmp_path / "first"
        main(["eval", "--embeddings", str(bench), "--out", str(first),
              "--seed", "3", *FAST])
        resolved = json.loads((first / "resolved_config.json").read_text())
        config_file = tmp_path / "replay.json"
        train_keys = {k: v for k, v in resolved.items()
                      if k not in ("command", "embeddings", "protocol", "config_hash")}
        config_file.write_text(json.dumps(train_keys))
        second = tmp_path / "second"
        code = main(["eval", "--embeddings", str(bench), "--out", str(second),
                     "--config", str(config_file)])
        assert code == EXIT_OK
        assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


class TestReport:
    def test_aggregates(self, bench, tmp_path):
        run = tmp_path / "run"
        main(["eval", "--embeddings", str(bench), "--out", str(run), *FAST])
        out = tmp_path / "summary"
        code = main(["report", "--inputs", str(run / "report.json"), "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "summary.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert "eer" in summary and "fixed" in summary
        assert summary["eer"]["n_reports"] == 1


class TestExportPrompts:
    def test_round_trip_through_store_reader(self, bench, tmp_path):
        run = tmp_path / "run"
        main(["train", "--embeddings", str(bench), "--out", str(run), *FAST])
        out_file = tmp_path / "prompt_embs.fase"
        code = main(["export-prompts", "--checkpoint", str(run / "prompts.fase"),
                     "--out", str(out_file), *FAST])
        assert code == EXIT_OK
        store = read_embeddings(out_file)
        assert len(store) == 4  # real + 3 unknown
        assert store.metas[0].id == "prompt:real"


class TestGradCheckCommand:
    def test_passes_on_defaults(self, capsys):
        assert main(["grad-check", "--seeds", "2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "max relative error" in out


class TestErrors:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--bogus-flag", "1"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, bench, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"learning_rate": 0.1}')
        code = main(["train", "--embeddings", str(bench),
                     "--out", str(tmp_path / "o"), "--config", str(cfg)])
        assert code == EXIT_BAD_CONFIG
        assert "unknown config keys" in capsys.readouterr().err

    def test_bad_protocol_file(self, bench, tmp_path):
        code = main(["eval", "--embeddings", str(bench), "--out", str(tmp_path / "o"),
                     "--protocol", str(tmp_path / "missing.json"), *FAST])
        assert code == EXIT_MISSING_FILE

    def test_help_documents_exit_codes(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "exit codes" in capsys.readouterr().out
