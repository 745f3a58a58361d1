import json
import shutil
import subprocess
import sys

import pytest

from codemix_offense.cli import main
from codemix_offense.corpus import load_split
from codemix_offense.ensemble import read_predictions


@pytest.fixture(scope="module")
def trained(tmp_path_factory, toy_root):
    out = tmp_path_factory.mktemp("cli")
    for name, backbone, seed in [("m1", "toy-mbert", 1), ("m2", "toy-xlmr", 1), ("m3", "toy-mbert", 2)]:
        assert main(["train", "--language", "kn", "--backbone", backbone, "--seed", str(seed), "--epochs", "2",
                     "--out", str(out / name)]) == 0
    return out


def test_stats_json(capsys):
    assert main(["stats", "--language", "kn"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["size"] == 36
    assert sum(payload["counts"].values()) == 36
    assert payload["matches_reference_size"] is False


def test_unknown_subcommand_exit_2():
    assert main(["frobnicate"]) == 2


def test_missing_required_option_exit_2(capsys):
    assert main(["train", "--language", "kn"]) == 2
    assert "--out" in capsys.readouterr().err


def test_unknown_language_exit_2():
    assert main(["stats", "--language", "xx"]) == 2


def test_bad_input_file_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\tc\td\n")
    assert main(["stats", "--language", "kn", "--path", str(bad)]) == 1
    assert ":1:" in capsys.readouterr().err


def test_train_writes_checkpoint_and_manifest(trained):
    meta = json.loads((trained / "m1" / "meta.json").read_text())
    assert meta["kind"] == "classifier"
    manifest = json.loads((trained / "m1" / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["data"]["train"]["size"] == 36


def test_predict_one_row_per_input_in_order(trained, toy_root, tmp_path):
    data = toy_root / "Kannada" / "test.tsv"
    out = tmp_path / "pred.tsv"
    assert main(["predict", "--language", "kn", "--model", str(trained / "m1"), "--data", str(data),
                 "--out", str(out)]) == 0
    rows = read_predictions(out)
    split = load_split(data, "kn", "test")
    assert [r[0] for r in rows] == split.ids
    assert all(lab in split.schema for _, lab in rows)


def test_ensemble_and_evaluate(trained, toy_root, tmp_path, capsys):
    dev = toy_root / "Kannada" / "dev.tsv"
    members = ",".join(str(trained / m) for m in ("m1", "m2", "m3"))
    out = tmp_path / "ens.tsv"
    assert main(["ensemble", "--language", "kn", "--members", members, "--data", str(dev), "--out", str(out)]) == 0
    audit = [json.loads(line) for line in (tmp_path / "ens.audit.jsonl").read_text().splitlines()]
    assert len(audit) == 12 and all(len(row["member_labels"]) == 3 for row in audit)
    capsys.readouterr()
    assert main(["evaluate", "--language", "kn", "--gold", str(dev), "--pred", str(out)]) == 0
    assert "F1 / Acc:" in capsys.readouterr().out
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert 0 <= metrics["weighted_f1"] <= 1


def test_evaluate_missing_predictions_exit_2(toy_root, tmp_path):
    pred = tmp_path / "p.tsv"
    pred.write_text("id\tlabel\ndev-0\tNot_offensive\n")
    assert main(["evaluate", "--language", "kn", "--gold", str(toy_root / "Kannada" / "dev.tsv"),
                 "--pred", str(pred)]) == 2


def test_ensemble_missing_member_exit_1(toy_root, tmp_path, capsys):
    assert main(["ensemble", "--language", "kn", "--members", str(tmp_path / "nope"),
                 "--data", str(toy_root / "Kannada" / "dev.tsv"), "--out", str(tmp_path / "e.tsv")]) == 1
    assert "nope" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"language": "ta", "split": "dev"}))
    assert main(["--config", str(config), "stats"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["language"] == "Tamil" and payload["split"] == "dev"
    assert main(["--config", str(config), "stats", "--split", "test"]) == 0
    assert json.loads(capsys.readouterr().out)["split"] == "test"


def test_reproduce_failure_writes_manifest(tmp_path, toy_root):
    root = tmp_path / "data"
    (root / "Kannada").mkdir(parents=True)
    shutil.copy(toy_root / "Kannada" / "train.tsv", root / "Kannada" / "train.tsv")
    shutil.copy(toy_root / "Kannada" / "dev.tsv", root / "Kannada" / "dev.tsv")
    out = tmp_path / "run"
    assert main(["reproduce", "--language", "kn", "--data-root", str(root), "--out", str(out)]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failed_step"] == "stats"


def test_console_script_help():
    result = subprocess.run([sys.executable, "-m", "codemix_offense.cli", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    assert "reproduce" in result.stdout
