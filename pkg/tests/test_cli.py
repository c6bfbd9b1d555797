import json
import subprocess
import sys

import pytest

from activecine.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main
from activecine.container import load_container
from activecine.corpus import ParamRanges, generate_corpus

SMALL = ParamRanges(lv_radius=(6, 7), wall_thickness=(2, 3), nx=48, ny=48, nt=4)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_corpus(root, 2, seed=5, ranges=SMALL)
    return root


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


SIM = ["--frames", "4", "--schedule", "1:3:1", "--recon", "nufft,cascade-tv"]


def test_gen_corpus_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-corpus", "--count", "2", "--seed", "7", "--out", str(tmp_path / d),
                     "--frames", "4", "--size", "96"]) == EXIT_OK
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    index = json.loads((tmp_path / "a" / "index.json").read_text())
    assert [s["tag"] for s in index["subjects"]] == ["disease", "healthy"]


def test_gen_corpus_custom_cohort(tmp_path):
    assert main(["gen-corpus", "--count", "1", "--out", str(tmp_path), "--frames", "4",
                 "--cohort", "mild:0.45:0.5"]) == EXIT_OK
    assert json.loads((tmp_path / "index.json").read_text())["subjects"][0]["tag"] == "mild"


def test_gen_corpus_count_zero(tmp_path, capsys):
    assert main(["gen-corpus", "--count", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "count" in capsys.readouterr().err


def test_simulate_outputs_and_determinism(tiny_corpus, tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", str(tiny_corpus), "--out", str(tmp_path / d), *SIM]) == EXIT_OK
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    assert {"steps.csv", "summary.json", "bland_altman_pairs.csv", "bland_altman_stats.csv"} <= set(a)
    assert sum(k.startswith("logs/") for k in a) == 4


def test_report_reproduces_summary(tiny_corpus, tmp_path):
    main(["simulate", str(tiny_corpus), "--out", str(tmp_path / "run"), *SIM])
    assert main(["report", str(tmp_path / "run" / "logs"), "--out", str(tmp_path / "rep")]) == EXIT_OK
    for name in ("summary.json", "steps.csv"):
        assert (tmp_path / "run" / name).read_bytes() == (tmp_path / "rep" / name).read_bytes()


def test_thresholds_zero_pass_at_start(tiny_corpus, tmp_path):
    cfg = tmp_path / "zero.cfg"
    cfg.write_text("qc1-threshold = 0\nqc2 = heuristic\nqc2-threshold = 0\nschedule = 2:5:1\n")
    assert main(["simulate", str(tiny_corpus), "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--frames", "4", "--recon", "nufft,cascade-tv"]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    for ms in summary["methods"].values():
        assert set(ms["passing_time_s"]["per_subject"].values()) == {2.0}


def test_missing_weights_names_path(tiny_corpus, tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["simulate", str(tiny_corpus), "--out", str(tmp_path / "o"), "--frames", "4",
                 "--recon", "cascade-conv", "--weights", str(missing)])
    assert code == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_unknown_config_key(tiny_corpus, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("frobnicate = 3\n")
    assert main(["simulate", str(tiny_corpus), "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_partial_failure_exit(tmp_path):
    generate_corpus(tmp_path / "c", 2, seed=1, ranges=SMALL)
    (tmp_path / "c" / "subj-001.acine").write_bytes(b"broken")
    code = main(["simulate", str(tmp_path / "c"), "--out", str(tmp_path / "o"), "--frames", "4",
                 "--schedule", "1:2:1"])
    assert code == EXIT_PARTIAL
    log = json.loads((tmp_path / "o" / "logs" / "subj-001__nufft.json").read_text())
    assert log["status"] == "failed" and log["error"]
    ok = json.loads((tmp_path / "o" / "logs" / "subj-000__nufft.json").read_text())
    assert ok["status"] in ("passed", "exhausted")


def test_train_reduces_loss_and_gradient_check(tmp_path, capsys):
    generate_corpus(tmp_path / "c", 1, seed=3, ranges=SMALL)
    out = tmp_path / "w.json"
    code = main(["train", str(tmp_path / "c"), "--out", str(out), "--profiles", "30", "--epochs", "200",
                 "--channels", "4", "--cascades", "2", "--train-frames", "2", "--gradient-check"])
    assert code == EXIT_OK
    lines = (tmp_path / "w.loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 202
    first, last = float(lines[1].split(",")[1]), float(lines[-1].split(",")[1])
    assert last < first
    err = float(capsys.readouterr().out.split("max relative error ")[1].split()[0])
    assert err <= 1e-4
    # the trained weights drive a cascade-conv simulation
    assert main(["simulate", str(tmp_path / "c"), "--out", str(tmp_path / "o"), "--frames", "4",
                 "--schedule", "1:2:1", "--recon", "cascade-conv", "--weights", str(out)]) == EXIT_OK


def test_train_divergence_reported(tmp_path, capsys):
    generate_corpus(tmp_path / "c", 1, seed=3, ranges=SMALL)
    code = main(["train", str(tmp_path / "c"), "--out", str(tmp_path / "w.json"), "--epochs", "20",
                 "--lr", "1e12", "--channels", "2", "--cascades", "2", "--train-frames", "2"])
    assert code == EXIT_PARTIAL
    assert "epoch" in capsys.readouterr().err


def test_recon_command(tiny_corpus, tmp_path):
    box = str(tiny_corpus / "subj-000.acine")
    for d in ("a", "b"):
        assert main(["recon", box, "--scan-time", "4", "--frames", "4", "--recon", "cascade-tv",
                     "--qc1-threshold", "0", "--out", str(tmp_path / d)]) == EXIT_OK
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    out = load_container(tmp_path / "a" / "recon.acine")
    assert out["recon"].shape == (4, 48, 48) and "labels" in out
    step = json.loads((tmp_path / "a" / "step.json").read_text())
    assert step["scan_time_s"] == 4.0


def test_recon_rejects_multiple_methods(tiny_corpus, tmp_path):
    assert main(["recon", str(tiny_corpus / "subj-000.acine"), "--scan-time", "1",
                 "--recon", "nufft,cascade-tv", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "activecine.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-corpus" in r.stdout
