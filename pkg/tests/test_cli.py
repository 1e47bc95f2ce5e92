import csv
import json
from pathlib import Path

import pytest

from duti.cli import main

DATA = Path(__file__).resolve().parent.parent / "data"
HP = DATA / "harry_potter"


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_debug_on_shipped_corpus(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, text, _ = _run(capsys, "debug", "--train", HP / "train.csv", "--trusted", HP / "trusted.csv",
                         "--task", "classification", "--budget", 12, "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == "duti/1" and doc["kind"] == "debug_report"
    assert doc["config"]["cross_validated"] is True
    assert len(doc["ranking"]) >= 12
    table = text.strip().splitlines()[2:]
    assert len(table) == len(doc["ranking"])
    # the eval round trip on the shipped truth
    code, text, _ = _run(capsys, "eval", "--report", out, "--truth", HP / "truth.json",
                         "--out-dir", tmp_path / "ev")
    assert code == 0
    assert (tmp_path / "ev" / "pr.csv").exists() and (tmp_path / "ev" / "fixes.csv").exists()


def test_debug_output_is_byte_identical(tmp_path, capsys):
    args = ["--train", HP / "train.csv", "--trusted", HP / "trusted.csv", "--task", "classification",
            "--lam", "1e-3", "--bandwidth", "0.3", "--budget", 12]
    _run(capsys, "--seed", 5, "debug", *args, "--out", tmp_path / "a.json")
    _run(capsys, "--seed", 5, "debug", *args, "--out", tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_missing_label_column_is_an_input_error(tmp_path, capsys):
    bad = tmp_path / "train.csv"
    bad.write_text("feature_0,target\n0.1,1\n")
    code, _, err = _run(capsys, "debug", "--train", bad, "--trusted", HP / "trusted.csv",
                        "--task", "classification", "--budget", 1, "--out", tmp_path / "r.json")
    assert code == 2 and "'label'" in err


def test_bad_number_names_line_and_column(tmp_path, capsys):
    bad = tmp_path / "train.csv"
    bad.write_text("feature_0,label\n0.1,1\nabc,0\n")
    code, _, err = _run(capsys, "baseline", "nn", "--train", bad, "--trusted", bad,
                        "--task", "classification", "--out", tmp_path / "r.json")
    assert code == 2 and "line 3" in err and "feature_0" in err


def test_lnd_requires_counts(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["baseline", "lnd", "--train", str(HP / "train.csv"), "--trusted", str(HP / "trusted.csv"),
              "--task", "classification", "--out", str(tmp_path / "r.json")])
    assert exc.value.code == 2


def test_nn_fixes_are_nearest_trusted_labels(tmp_path, capsys):
    out = tmp_path / "nn.json"
    code, _, _ = _run(capsys, "baseline", "nn", "--train", HP / "train.csv", "--trusted", HP / "trusted.csv",
                      "--task", "classification", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["fix_kind"] == "label"
    assert all(row["fix"] != row["original_label"] for row in doc["ranking"])


def test_lnd_with_counts(tmp_path, capsys):
    out = tmp_path / "lnd.json"
    code, _, _ = _run(capsys, "baseline", "lnd", "--train", HP / "train.csv", "--trusted", HP / "trusted.csv",
                      "--task", "classification", "--n-pos", 0, "--n-neg", 12, "--out", out)
    assert code == 0
    assert len(json.loads(out.read_text())["ranking"]) == 12


def test_simulate_sine_is_reproducible(tmp_path, capsys):
    for d in ("a", "b"):
        assert _run(capsys, "--seed", 2, "simulate", "sine", "--out-dir", tmp_path / d)[0] == 0
    assert len(_rows(tmp_path / "a" / "train.csv")) == 100
    assert len(_rows(tmp_path / "a" / "trusted.csv")) == 3
    for name in ("train.csv", "trusted.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    labels = [float(r["label"]) for r in _rows(tmp_path / "a" / "train.csv")]
    assert truth["bug_indices"] == [i for i, (y, t) in enumerate(zip(labels, truth["true_labels"])) if y != t]
    assert len(truth["bug_indices"]) == 24


def test_eval_perfect_ranking_and_mismatch(tmp_path, capsys):
    _run(capsys, "simulate", "harry_potter", "--out-dir", tmp_path / "c")
    truth = json.loads((tmp_path / "c" / "truth.json").read_text())
    perfect = {"schema": "duti/1", "kind": "baseline_ranking", "method": "oracle", "task": "classification",
               "n": truth["n"], "fix_kind": "label",
               "ranking": [{"index": i, "rank": r, "fix": truth["true_labels"][i]}
                           for r, i in enumerate(truth["bug_indices"], start=1)]}
    (tmp_path / "p.json").write_text(json.dumps(perfect))
    code, _, _ = _run(capsys, "eval", "--report", tmp_path / "p.json", "--truth", tmp_path / "c" / "truth.json",
                      "--out-dir", tmp_path / "ev")
    assert code == 0
    assert all(float(r["precision"]) == 1.0 for r in _rows(tmp_path / "ev" / "pr.csv"))
    fixes = _rows(tmp_path / "ev" / "fixes.csv")
    assert [int(r["correct_fixes"]) for r in fixes] == list(range(1, len(fixes) + 1))

    perfect["n"] += 1
    (tmp_path / "p.json").write_text(json.dumps(perfect))
    code, _, err = _run(capsys, "eval", "--report", tmp_path / "p.json", "--truth", tmp_path / "c" / "truth.json",
                        "--out-dir", tmp_path / "ev")
    assert code == 2 and "n=" in err


def test_eval_rejects_wrong_document(tmp_path, capsys):
    (tmp_path / "x.json").write_text('{"schema": "other"}')
    code, _, err = _run(capsys, "eval", "--report", tmp_path / "x.json", "--truth", tmp_path / "x.json",
                        "--out-dir", tmp_path)
    assert code == 2 and "duti/1" in err
