import json
import subprocess
import sys

import pytest

from emopolar import cli
from emopolar.data import GITHUB, write_dataset
from emopolar.synthetic import CorpusSpec, fixture_lexicon_text, generate_corpus, manifest_standin

SMALL_MODEL = {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_len": 24, "epochs": 2,
               "patience": 2, "learning_rate": 0.003, "dropout": 0.0}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("ws")
    write_dataset(generate_corpus(CorpusSpec(n=100), seed=2), d / "syn.csv")
    write_dataset(generate_corpus(CorpusSpec(n=100), seed=2), d / "syn.jsonl", "jsonl")
    (d / "swn.txt").write_text(fixture_lexicon_text(), encoding="utf-8")
    (d / "small.json").write_text(json.dumps(SMALL_MODEL))
    return d


def run(*argv):
    return cli.main([str(a) for a in argv])


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_prepare_ok(ws, capsys):
    assert run("prepare", "--dataset", ws / "syn.csv") == 0
    out = capsys.readouterr().out
    assert "100 rows, OK" in out and "neutral" in out
    assert run("prepare", "--dataset", ws / "syn.jsonl") == 0


def test_prepare_manifest(tmp_path, capsys):
    write_dataset(manifest_standin(GITHUB), tmp_path / "gh.csv")
    assert run("prepare", "--dataset", tmp_path / "gh.csv", "--manifest", "github") == 0
    assert "2000 rows, OK" in capsys.readouterr().out
    assert run("prepare", "--dataset", tmp_path / "gh.csv", "--manifest", "stackoverflow") == 2
    assert "expected 4800" in err_json(capsys)["message"]


def test_truncated_file_reports_row(ws, tmp_path, capsys):
    lines = (ws / "syn.csv").read_text().splitlines()
    lines[5] = ",".join(lines[5].split(",")[:4])
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    assert run("prepare", "--dataset", tmp_path / "bad.csv") == 2
    rec = err_json(capsys)
    assert rec["row"] == 6 and rec["exit_code"] == 2


def test_missing_dataset_is_validation_error(capsys):
    assert run("prepare") == 2
    assert "dataset" in err_json(capsys)["message"]


def test_extract_polarity(ws, tmp_path, capsys):
    assert run("extract-polarity", "--dataset", ws / "syn.csv", "--lexicon", ws / "swn.txt",
               "--out", tmp_path, "--run-id", "pol") == 0
    out = capsys.readouterr().out
    stats = json.loads((tmp_path / "pol" / "polarity_stats.json").read_text())
    assert stats["coverage"] > 0.5 and f"coverage {stats['coverage']:.4f}" in out
    rows = (tmp_path / "pol" / "polarity.jsonl").read_text().splitlines()
    assert len(rows) == 100 and "polarity_words" in json.loads(rows[0])
    assert run("extract-polarity", "--dataset", ws / "syn.csv", "--lexicon", ws / "swn.txt", "--tau", 1.0,
               "--out", tmp_path, "--run-id", "strict") == 0
    assert json.loads((tmp_path / "strict" / "polarity_stats.json").read_text())["coverage"] == 0.0


def test_bad_lexicon_reports_line(ws, tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("# h\na\t1\tx\t0\tgood#1\tg\n")
    assert run("extract-polarity", "--dataset", ws / "syn.csv", "--lexicon", tmp_path / "bad.txt",
               "--out", tmp_path) == 2
    assert err_json(capsys)["line_no"] == 2


@pytest.fixture(scope="module")
def trained(ws, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert run("--config", ws / "small.json", "train", "--dataset", ws / "syn.csv", "--out", out,
               "--seeds", 0, 1, "--run-id", "base") == 0
    assert run("--config", ws / "small.json", "train", "--dataset", ws / "syn.csv", "--out", out,
               "--seeds", 0, 1, "--run-id", "pol", "--mode", "polarity", "--lexicon", ws / "swn.txt",
               "--blend", "attention-keys") == 0
    for name in ("base", "pol"):
        assert run("evaluate", "--run", out / name) == 0
    return out


def test_train_layout(trained):
    sd = trained / "base" / "seed-0"
    assert (sd / "vocab.txt").exists() and (sd / "split.json").exists() and (sd / "train_log.jsonl").exists()
    assert len(list((sd / "checkpoints").glob("*.patn"))) == 6
    assert len(list((sd / "checkpoints").glob("*.json"))) == 6
    cfg = json.loads((trained / "base" / "run_config.json").read_text())
    assert cfg["d_model"] == 16 and cfg["seeds"] == [0, 1] and cfg["command"] == "train"
    report = json.loads((sd / "report.json").read_text())
    assert report["metadata"]["n_test"] == 20


def test_compare_paired_and_reference(trained, capsys):
    reports = [trained / m / f"seed-{s}" / "report.json" for m in ("base", "pol") for s in (0, 1)]
    assert run("compare", *reports) == 0
    out = capsys.readouterr().out
    assert "(+/-) polarity/seed-0" in out
    assert out.count("polarity macro") == 2 and "mean paired macro-F1 delta" in out
    assert run("compare", reports[0], "--reference", "sentimoji-github") == 0
    out = capsys.readouterr().out
    assert "0.530" in out and "0.521" in out and "not a reproduction claim" in out
    assert run("compare", reports[0], "--reference", "nope") == 2
    assert "available" in err_json(capsys)["message"]


def test_errors_single_prediction_file(ws, trained, tmp_path, capsys):
    preds = trained / "base" / "seed-0" / "predictions.csv"
    after = trained / "pol" / "seed-0" / "predictions.csv"
    assert run("errors", "--dataset", ws / "syn.csv", "--predictions", preds, "--after", after,
               "--out", tmp_path, "--run-id", "e") == 0
    out = capsys.readouterr().out
    assert "(1 model)" in out and "resolved" in out
    assert (tmp_path / "e" / "category_report.txt").read_text().startswith("unanimous errors")


def test_evaluate_against_other_vocab_is_compat_error(ws, trained, tmp_path, capsys):
    src = trained / "base" / "seed-0"
    vocab = src / "vocab.txt"
    original = vocab.read_text()
    try:
        vocab.write_text(original + "zzz\n")
        assert run("evaluate", "--run", trained / "base") == 4
        assert err_json(capsys)["error"] == "CompatibilityError"
    finally:
        vocab.write_text(original)


def test_corrupt_checkpoint_is_compat_error(trained, capsys):
    ck = trained / "pol" / "seed-1" / "checkpoints" / "joy.patn"
    original = ck.read_bytes()
    try:
        ck.write_bytes(b"NOPE" + original[4:])
        assert run("evaluate", "--run", trained / "pol") == 4
    finally:
        ck.write_bytes(original)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_training_exit_code(ws, tmp_path, capsys):
    (tmp_path / "hot.json").write_text(json.dumps({**SMALL_MODEL, "learning_rate": 1e300}))
    code = run("--config", tmp_path / "hot.json", "train", "--dataset", ws / "syn.csv", "--out", tmp_path)
    assert code == 3
    rec = err_json(capsys)
    assert rec["error"] == "TrainingError" and rec["emotion"] == "anger" and rec["epoch"] == 1


def test_settings_precedence(ws, tmp_path, monkeypatch):
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 7, "tau": 0.2, "d_model": 32}))
    args = cli.build_parser().parse_args(["--config", str(tmp_path / "c.json"), "train", "--epochs", "9"])
    cfg = cli.resolve_config(args, environ={"EMOPOL_TAU": "0.3", "EMOPOL_EPOCHS": "8", "EMOPOL_SEEDS": "1,2"})
    assert (cfg.epochs, cfg.tau, cfg.d_model, cfg.seeds) == (9, 0.3, 32, [1, 2])
    (tmp_path / "bad.json").write_text(json.dumps({"epoch": 3}))
    assert run("--config", tmp_path / "bad.json", "prepare", "--dataset", ws / "syn.csv") == 2


def test_exit_code_mapping():
    from emopolar import tensor as T, train as Tr
    assert cli.exit_code_for(Tr.CompatibilityError("x")) == 4
    assert cli.exit_code_for(T.CheckpointError("x")) == 4
    assert cli.exit_code_for(Tr.TrainingError("joy", 2)) == 3
    assert cli.exit_code_for(ValueError("x")) == 2


def test_console_entry_point(ws):
    proc = subprocess.run([sys.executable, "-m", "emopolar.cli", "prepare", "--dataset", str(ws / "syn.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "OK" in proc.stdout
