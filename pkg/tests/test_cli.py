import subprocess
import sys
from dataclasses import fields

import pytest

from gpforecast.cli import (
    EXIT_EMPTY,
    EXIT_EXISTS,
    EXIT_FORMAT,
    EXIT_OK,
    RunConfig,
    build_parser,
    main,
    resolve_config,
)
from gpforecast.evaluation import read_report
from gpforecast.history import INDEX_FILE, load_bank, read_index
from gpforecast.ingest import normalize, synth_corpus, write_raw_trajectories

FAST = ["--budget", "4", "--prefix-ends", "0.2,1.0,2.0", "--max-maneuvers", "3"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "corpus"
    assert main(["synth", "--corpus-dir", str(path), "--synth-n", "4", "--bank-budget", "20"]) == EXIT_OK
    return path


def test_extract_synth_writes_forty_windows(tmp_path):
    out = tmp_path / "c"
    rc = main(["extract", "--synth", "n=40", "seed=7", "--corpus-dir", str(out), "--bank-budget", "5"])
    assert rc == EXIT_OK
    assert len(read_index(out)) == 40
    assert len(list(out.glob("*.txt"))) == 41
    assert main(["extract", "--synth", "n=3", "--corpus-dir", str(out)]) == EXIT_EXISTS
    assert main(["extract", "--synth", "n=3", "--corpus-dir", str(out), "--force", "--bank-budget", "5"]) == 0
    assert len(read_index(out)) == 3


def test_extract_from_raw_file(tmp_path):
    windows = synth_corpus(5, seed=11)
    raw = tmp_path / "traj.txt"
    write_raw_trajectories(windows, raw)
    out = tmp_path / "c"
    assert main(["extract", "--input", str(raw), "--corpus-dir", str(out), "--bank-budget", "5"]) == 0
    bank = load_bank(out)
    assert len(bank) == 5
    for w, e in zip(windows, bank):
        assert e.window.y == pytest.approx(normalize(w).y, abs=1e-9)


def test_extract_error_codes(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1,2,3\n")
    assert main(["extract", "--input", str(bad), "--corpus-dir", str(tmp_path / "a")]) == EXIT_FORMAT
    assert main(["extract", "--corpus-dir", str(tmp_path / "a")]) == EXIT_FORMAT
    flat = tmp_path / "flat.txt"
    flat.write_text("".join(f"1 {100 + i} 0 0 12.0 " + "0 " * 8 + "2\n" for i in range(60)))
    assert main(["extract", "--input", str(flat), "--corpus-dir", str(tmp_path / "b")]) == EXIT_EMPTY
    assert main(["extract", "--synth", "size=3", "--corpus-dir", str(tmp_path / "c")]) == EXIT_FORMAT


def test_evaluate_and_report(corpus, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["evaluate", "--corpus-dir", str(corpus), "--out-dir", str(out), *FAST]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"fig3.csv", "fig4.csv", "fig5.csv", "summary.txt"}
    report = read_report(out)
    assert {r.model for r in report.fig3} == {"baseline", "gp", "compound"}
    assert sorted({r.history_count for r in report.fig5}) == [0, 1, 2]
    summary = (out / "summary.txt").read_text()
    assert "budget=4" in summary and "max_maneuvers=3" in summary
    capsys.readouterr()
    assert main(["report", "--out-dir", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "horizon_s" in text and "history" in text


def test_evaluate_is_deterministic(corpus, tmp_path):
    for name in ("a", "b"):
        main(["evaluate", "--corpus-dir", str(corpus), "--out-dir", str(tmp_path / name), *FAST])
    for f in ("fig3.csv", "fig4.csv", "fig5.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def summary(name):
        lines = (tmp_path / name / "summary.txt").read_text().splitlines()
        return [ln for ln in lines if not ln.startswith("out_dir=")]

    assert summary("a") == summary("b")


def test_evaluate_single_model(corpus, tmp_path):
    out = tmp_path / "r"
    assert main(["evaluate", "--corpus-dir", str(corpus), "--out-dir", str(out),
                 "--models", "baseline", *FAST]) == EXIT_OK
    assert {r.model for r in read_report(out).fig3} == {"baseline"}


def test_evaluate_error_codes(tmp_path, corpus):
    assert main(["evaluate", "--corpus-dir", str(tmp_path / "missing")]) == EXIT_EMPTY
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / INDEX_FILE).write_text("")
    assert main(["evaluate", "--corpus-dir", str(empty)]) == EXIT_EMPTY
    assert main(["evaluate", "--corpus-dir", str(corpus), "--refit", "never"]) == EXIT_FORMAT


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("budget = 30\nthreshold = 1.5\nfix_c = true\n")
    resolved = resolve_config(str(cfg), {"budget": "12"})
    assert (resolved.budget, resolved.threshold, resolved.fix_c, resolved.seed) == (12, 1.5, True, 0)
    assert resolve_config(None, {}) == RunConfig()


def test_unknown_config_key_is_fatal(tmp_path, corpus):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("budgett = 30\n")
    assert main(["evaluate", "--config", str(cfg), "--corpus-dir", str(corpus)]) == EXIT_FORMAT
    cfg.write_text("fix_c = maybe\n")
    assert main(["evaluate", "--config", str(cfg), "--corpus-dir", str(corpus)]) == EXIT_FORMAT


def test_help_lists_every_key():
    sub = build_parser()._subparsers._group_actions[0].choices["evaluate"]
    text = sub.format_help()
    for f in fields(RunConfig):
        assert "--" + f.name.replace("_", "-") in text


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gpforecast", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "evaluate" in proc.stdout
