import json

import pytest

from regmt import cli, pipeline
from regmt.config import ConfigError, ExperimentConfig, coerce, load_config
from regmt.phrasetable import read_moses

SMALL = """\
synth = true
synth_vocab = 30
synth_count = 300
synth_min_len = 3
synth_max_len = 8
len_min = 3
len_max = 8
per_bucket = 3
m_list = [20]
ridge_lambdas = [0.1, 1.0]
fsr_iters = [20, 50]
fsr_eps = 0.05
lm_order = 2
weight_grid = [0.0, 1.0, 3.0]
workers = 1
"""


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    def test_precedence(self, config_file):
        cfg = load_config(config_file, {"beam": "4", "m_list": "10,30", "synth_vocab": None})
        assert cfg.beam == 4 and cfg.m_list == [10, 30] and cfg.synth_vocab == 30
        assert ExperimentConfig().beam == 8

    @pytest.mark.parametrize("name,raw,value", [("decode", "false", False), ("fsr_eps", "0.5", 0.5),
                                                ("solvers", "fsr", ["fsr"]),
                                                ("corpus_source", "x.txt", "x.txt")])
    def test_coerce(self, name, raw, value):
        assert coerce(name, raw) == value

    @pytest.mark.parametrize("name,raw", [("beam", "wide"), ("decode", "maybe"), ("nope", 1),
                                          ("beam", 2.5)])
    def test_coerce_errors(self, name, raw):
        with pytest.raises(ConfigError):
            coerce(name, raw)

    @pytest.mark.parametrize("override", [{"solvers": "lasso"}, {"fsr_eps": "0"},
                                          {"cov_lo": "0.9", "cov_hi": "0.5"},
                                          {"decode_order": "3"}, {"synth": "false"}])
    def test_validation(self, config_file, override):
        with pytest.raises(ConfigError):
            load_config(config_file, override)

    def test_hash_tracks_content(self):
        assert ExperimentConfig(synth=True).hash() == ExperimentConfig(synth=True).hash()
        assert ExperimentConfig(synth=True).hash() != ExperimentConfig(synth=True, beam=4).hash()


class TestExitCodes:
    def test_bad_config_is_2(self, tmp_path, config_file):
        assert run_cli("run", "--config", config_file, "--beam", "0") == 2
        bad = tmp_path / "bad.toml"
        bad.write_text("synth = [")
        assert run_cli("prepare", "--config", bad) == 2

    def test_missing_corpus_file_is_2(self, tmp_path):
        assert run_cli("prepare", "--corpus-source", tmp_path / "nope",
                       "--corpus-target", tmp_path / "nope2") == 2

    def test_run_without_prepare_is_2(self, tmp_path, config_file):
        assert run_cli("run", "--config", config_file, "--output-dir", tmp_path / "out") == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            run_cli("train")

    def test_sentence_failure_is_1(self, tmp_path, config_file, monkeypatch):
        out = tmp_path / "out"
        assert run_cli("prepare", "--config", config_file, "--output-dir", out) == 0
        real = pipeline.prepare_item
        state = {"n": 0}

        def flaky(ctx, pair, m):
            state["n"] += 1
            if state["n"] == 1:
                raise RuntimeError("boom")
            return real(ctx, pair, m)

        monkeypatch.setattr(pipeline, "prepare_item", flaky)
        assert run_cli("run", "--config", config_file, "--output-dir", out) == 1
        report = json.loads((out / "report.json").read_text())
        assert report["failures"][0]["error"] == "RuntimeError: boom"


class TestEndToEnd:
    def test_prepare_run_export(self, tmp_path, config_file):
        out = tmp_path / "out"
        assert run_cli("prepare", "--config", config_file, "--output-dir", out) == 0
        split = json.loads((out / "split.json").read_text())
        assert split and (out / "train.src").exists()
        assert run_cli("run", "--config", config_file, "--output-dir", out) == 0
        report = json.loads((out / "report.json").read_text())
        assert [r["solver"] for r in report["reports"]] == ["ridge", "fsr"]
        for r in report["reports"]:
            assert 0 <= r["f1"] <= 1 and 0 <= r["bleu"] <= 1
        tuned = json.loads((out / "tuned.json").read_text())
        assert set(tuned) == {"ridge.m20", "fsr.m20"}
        assert tuned["ridge.m20"]["value"] in (0.1, 1.0)
        n_test = report["reports"][0]["n_test"]
        assert len((out / "hyp.fsr.m20.txt").read_text().splitlines()) == n_test

        assert run_cli("export-pt", "--config", config_file, "--output-dir", out) == 0
        pt_dir = out / "phrase_tables" / "fsr.m20"
        manifest = json.loads((pt_dir / "manifest.json").read_text())
        assert manifest
        for name in manifest.values():
            for e in read_moses(pt_dir / name):
                assert 0 < e.p_dir <= 1 and e.penalty == "2.718"

    def test_deterministic(self, tmp_path, config_file):
        rows = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_cli("prepare", "--config", config_file, "--output-dir", out)
            run_cli("run", "--config", config_file, "--output-dir", out)
            rep = json.loads((out / "report.json").read_text())
            for r in rep["reports"]:
                r.pop("config_hash")
            rows.append((rep["reports"], rep["per_sentence"],
                         (out / "hyp.fsr.m20.txt").read_bytes(),
                         (out / "split.json").read_bytes()))
        assert rows[0] == rows[1]

    def test_eval_command(self, tmp_path, capsys):
        (tmp_path / "h").write_text("a b c d e\n")
        (tmp_path / "r").write_text("a b c d e\n")
        assert run_cli("eval", tmp_path / "h", tmp_path / "r") == 0
        assert "BLEU = 1.0000" in capsys.readouterr().out
        (tmp_path / "r2").write_text("a\nb\n")
        assert run_cli("eval", tmp_path / "h", tmp_path / "r2") == 2
