import json
import subprocess
import sys

import pytest
from conftest import TOY_ALPHA_THRESHOLD

from shallowfusion.cli import main


def run(*args):
    return main([str(a) for a in args])


def summary(out):
    return json.loads((out / "eval_summary.json").read_text())


def test_eval_flags(toy_corpus, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("eval", "--manifest", toy_corpus["manifest"], "--arpa", toy_corpus["arpa"],
               "--alpha", "1.0", "--out-dir", out) == 0
    assert "WER=0.00" in capsys.readouterr().out
    s = summary(out)
    assert s["config"]["scorer"] == "ngram"
    assert s["config"]["temperature_schedule"] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert s["config"]["beam_size"] == 5 and s["config"]["min_lm_tokens"] == 4


def test_config_file_and_flag_override(toy_corpus, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        f'manifest = "{toy_corpus["manifest"]}"\narpa = "{toy_corpus["arpa"]}"\n'
        f'alpha = 1.0\nbeam-size = 3\nout_dir = "{tmp_path / "a"}"\n'
    )
    assert run("eval", "--config", cfg) == 0
    assert summary(tmp_path / "a")["config"]["alpha"] == 1.0
    assert summary(tmp_path / "a")["config"]["beam_size"] == 3
    assert run("eval", "--config", cfg, "--alpha", "0", "--out-dir", tmp_path / "b") == 0
    s = summary(tmp_path / "b")
    assert s["config"]["alpha"] == 0.0 and s["config"]["beam_size"] == 3 and s["corpus_wer"] > 0

    jcfg = tmp_path / "c.json"
    jcfg.write_text(json.dumps({"manifest": str(toy_corpus["manifest"]), "no_beam": True,
                                "out_dir": str(tmp_path / "j")}))
    assert run("eval", "--config", jcfg) == 0
    assert summary(tmp_path / "j")["config"]["greedy"] is True


def test_params_file(toy_corpus, tmp_path):
    params = tmp_path / "best.json"
    params.write_text(json.dumps({"alpha": TOY_ALPHA_THRESHOLD + 0.05, "beta": 0.0}))
    assert run("eval", "--manifest", toy_corpus["manifest"], "--arpa", toy_corpus["arpa"],
               "--params", params, "--out-dir", tmp_path / "p") == 0
    assert summary(tmp_path / "p")["corpus_wer"] == 0.0
    # explicit --alpha wins over the params file
    assert run("eval", "--manifest", toy_corpus["manifest"], "--arpa", toy_corpus["arpa"],
               "--params", params, "--alpha", "0", "--out-dir", tmp_path / "q") == 0
    assert summary(tmp_path / "q")["config"]["alpha"] == 0.0


@pytest.mark.parametrize(
    "argv",
    [
        ["eval"],
        ["eval", "--manifest", "m.jsonl", "--bogus"],
        ["nonsense"],
        ["ablate", "--manifest", "m.jsonl"],
        ["eval", "--manifest", "m.jsonl", "--temperature-schedule", "0.4,0.2"],
        ["eval", "--manifest", "m.jsonl", "--temperature-schedule", "a,b"],
        ["eval", "--manifest", "m.jsonl", "--beam-size", "0"],
        ["leakage", "--corpus", "c.txt"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == 1


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("alhpa = 1.0\n")
    assert run("eval", "--config", cfg) == 1


def test_data_errors(toy_corpus, tmp_path):
    assert run("eval", "--manifest", tmp_path / "missing.jsonl") == 2
    bad_arpa = tmp_path / "bad.arpa"
    bad_arpa.write_text("not an arpa file\n")
    assert run("eval", "--manifest", toy_corpus["manifest"], "--arpa", bad_arpa, "--out-dir", tmp_path / "o") == 2
    assert run("report", "--fixtures-dir", tmp_path, "--out-dir", tmp_path / "r") == 2
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("hola\n")
    assert run("leakage", "--corpus", corpus, "--eval-set", empty, "--out-dir", tmp_path / "l") == 2


def test_ablate_and_report(toy_corpus, tmp_path, capsys):
    assert run("ablate", "--manifest", toy_corpus["manifest"], "--arpa", toy_corpus["arpa"],
               "--alpha", "1", "--arm", "no_beam", "--out-dir", tmp_path / "a") == 0
    assert json.loads((tmp_path / "a" / "ablation_no_beam.json").read_text())["delta"] > 0
    assert run("ablate", "--arm", "timestamps", "--out-dir", tmp_path / "t") == 0
    assert run("report", "--out-dir", tmp_path / "r") == 0
    text = capsys.readouterr().out
    assert "llm" in text and "W=0.0" in text
    assert (tmp_path / "r" / "summary.json").exists()


def test_optimize_then_eval(toy_corpus, tmp_path):
    out = tmp_path / "opt"
    assert run("optimize", "--manifest", toy_corpus["manifest"], "--arpa", toy_corpus["arpa"],
               "--trials", "20", "--seed", "1", "--out-dir", out) == 0
    assert run("eval", "--manifest", toy_corpus["manifest"], "--arpa", toy_corpus["arpa"],
               "--params", out / "best_params.json", "--out-dir", tmp_path / "e") == 0
    assert summary(tmp_path / "e")["corpus_wer"] == 0.0


def test_leakage_command(tmp_path):
    corpus = tmp_path / "euscrawl.txt"
    corpus.write_text("Kaixo mundua. Zer moduz?\nEgun on.\n")
    ev = tmp_path / "cv13.txt"
    ev.write_text("kaixo mundua\negun on\nagur\nzer moduz\n")
    assert run("leakage", "--corpus", corpus, "--eval-set", ev, "--segment", "--language", "eu",
               "--out-dir", tmp_path / "l") == 0
    assert (tmp_path / "l" / "leakage.csv").read_text().splitlines()[1] == "eu,cv13,euscrawl,75.0000"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "shallowfusion", "report", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "shallowfusion", "eval"], capture_output=True, text=True)
    assert res.returncode == 1
