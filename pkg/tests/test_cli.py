import csv
import json
import shutil
import subprocess

import pytest

from mmfusion.cli import RunConfig, main
from mmfusion.series import Dataset, load_records, save_records

TINY_RUN = {
    "T": 8, "vocab_cap": 40,
    "train": {"lr": 0.01, "max_epochs": 2, "patience": 1},
    "grid": {"lr": [0.01], "delta_r": [0.1], "delta_fg": [0.0001], "units": [8]},
}


def write_json(path, blob):
    path.write_text(json.dumps(blob))
    return path


@pytest.fixture
def events(tmp_path):
    cfg = write_json(tmp_path / "syn.json", {"n_records": 90, "n_channels": 3, "vocab_size": 30,
                                             "seed": 5})
    out = tmp_path / "events.txt"
    assert main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    return out


@pytest.fixture
def trained(tmp_path, events):
    cfg = write_json(tmp_path / "run.json", {"data": {"path": str(events)}, "modality": "late",
                                             "hours": [24], **TINY_RUN})
    outdir = tmp_path / "model"
    assert main(["train", "--config", str(cfg), "--out", str(outdir), "--seed", "1"]) == 0
    return outdir


# --- synthesize -----------------------------------------------------------------------

def test_synthesize_writes_one_label_per_record(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"n_records": 10})
    out = tmp_path / "e.txt"
    assert main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    labels = [ln for ln in out.read_text().splitlines() if ln.startswith("LABEL|")]
    assert len(labels) == 10


def test_synthesize_is_byte_identical_for_a_seed(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"n_records": 25})
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for out in (a, b):
        assert main(["synthesize", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synthesize_zero_records_exits_one(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"n_records": 0})
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "e.txt")]) == 1
    assert "n_records" in capsys.readouterr().err


def test_synthesize_accepts_run_config(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"data": {"synthetic": {"n_records": 7}}})
    out = tmp_path / "e.txt"
    assert main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(load_records(out)) == 7


def test_missing_config_exits_one(tmp_path):
    assert main(["synthesize", "--config", str(tmp_path / "nope.json"), "--out", "x"]) == 1


def test_unknown_command_exits_one():
    assert main(["bake"]) == 1


# --- train / evaluate -------------------------------------------------------------------

def test_train_writes_artifacts(trained):
    assert (trained / "model.json").is_file()
    history = (trained / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_auc" and len(history) >= 2


def test_evaluate_prints_finite_auc(trained, events, capsys):
    capsys.readouterr()
    assert main(["evaluate", "--model", str(trained / "model.json"),
                 "--data", str(events)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("auc=")
    assert 0.0 <= float(line[4:]) <= 1.0


def test_evaluate_twice_is_identical(trained, events, capsys):
    outs = []
    for _ in range(2):
        capsys.readouterr()
        assert main(["evaluate", "--model", str(trained / "model.json"),
                     "--data", str(events)]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_evaluate_missing_checkpoint_exits_one(tmp_path, events):
    assert main(["evaluate", "--model", str(tmp_path / "absent.json"),
                 "--data", str(events)]) == 1


def test_evaluate_single_class_exits_two(tmp_path, trained, events):
    ds = load_records(events)
    ones = Dataset(tuple(r for r in ds.records if r.label == 1), ds.channel_names)
    path = tmp_path / "ones.txt"
    save_records(ones, path)
    assert main(["evaluate", "--model", str(trained / "model.json"), "--data", str(path)]) == 2


def test_evaluate_malformed_data_exits_two(tmp_path, trained):
    bad = tmp_path / "bad.txt"
    bad.write_text("TS|a|HR|x|1\n")
    assert main(["evaluate", "--model", str(trained / "model.json"), "--data", str(bad)]) == 2


def test_train_is_deterministic(tmp_path, events):
    cfg = write_json(tmp_path / "run.json", {"data": {"path": str(events)}, "modality": "ts",
                                             "hours": [12], **TINY_RUN})
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "model.json").read_bytes() == \
        (tmp_path / "b" / "model.json").read_bytes()


@pytest.mark.parametrize("variant", ["we-cnn", "use-gru", "wse-gru"])
def test_embedding_variants_round_trip(tmp_path, events, capsys, variant):
    cfg = write_json(tmp_path / "run.json", {
        "data": {"path": str(events)}, "modality": "text", "hours": [0],
        "text_variant": variant, "embeddings": {"random": 6, "seed": 1}, **TINY_RUN})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
    printed = capsys.readouterr().out.splitlines()[0]
    assert main(["evaluate", "--model", str(tmp_path / "m" / "model.json"),
                 "--data", str(events)]) == 0
    assert capsys.readouterr().out.startswith("auc=")
    assert printed.startswith("test_auc=")


# --- experiment -----------------------------------------------------------------------------

def test_experiment_single_cell(tmp_path, events):
    cfg = write_json(tmp_path / "run.json", {"data": {"path": str(events)},
                                             "modalities": ["text"], "hours": [0],
                                             "seeds": [0], **TINY_RUN})
    out = tmp_path / "exp"
    assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "results.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["modality", "hours", "seed", "auc"] and len(rows) == 2
    with open(out / "plotdata_text.csv") as fh:
        assert next(csv.reader(fh)) == ["hours", "mean", "ci_lo", "ci_hi"]
    assert json.loads((out / "aggregate.json").read_text())["summary"][0]["n"] == 1


def test_experiment_plotdata_per_modality(tmp_path):
    cfg = write_json(tmp_path / "run.json", {
        "data": {"synthetic": {"n_records": 80, "n_channels": 3, "vocab_size": 30, "seed": 1}},
        "modalities": ["ts", "late"], "hours": [6, 24], "seeds": [0, 1], **TINY_RUN})
    out = tmp_path / "exp"
    assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    for m in ("ts", "late"):
        with open(out / f"plotdata_{m}.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["hours", "mean", "ci_lo", "ci_hi"]
        assert [r[0] for r in rows[1:]] == ["6", "24"]
        for _, mean, lo, hi in rows[1:]:
            assert float(lo) <= float(mean) <= float(hi)


@pytest.mark.parametrize("blob", [
    {"data": {"path": "a", "synthetic": {}}},
    {"data": {}},
    {"data": {"path": "a"}, "hours": [7]},
    {"data": {"path": "a"}, "colour": "red"},
    {"modality": "late"},
])
def test_invalid_run_configs(tmp_path, blob):
    cfg = write_json(tmp_path / "run.json", blob)
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    with pytest.raises((ValueError, TypeError)):
        RunConfig.from_dict(blob)


def test_experiment_missing_data_file_exits_one(tmp_path):
    cfg = write_json(tmp_path / "run.json", {"data": {"path": str(tmp_path / "none.txt")}})
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.skipif(shutil.which("mmfusion") is None, reason="console script not installed")
def test_console_script_exit_code(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"n_records": 0})
    proc = subprocess.run(["mmfusion", "synthesize", "--config", str(cfg), "--out",
                           str(tmp_path / "e.txt")], capture_output=True, text=True)
    assert proc.returncode == 1
