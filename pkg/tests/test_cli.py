import csv
import json

import numpy as np
import pytest

from vmfloss.cli import main

SPEC = """
n = 6
Y = 3
per_class = 40
kappa_clean = 20.0
ambiguous_fraction = 0.1
seed = 4
out_dir = "data"
test_fraction = 0.3
"""

CONFIG = """
variant = "{variant}"
dim = 4
hidden = [12]
out_dir = "run_{variant}"
train_data = "data/train.npz"
test_data = "data/test.npz"
val_fraction = 0.2

[train]
lr = 0.05
classes_per_batch = 3
per_class = 6
max_epochs = 3
seed = 5
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "spec.toml").write_text(SPEC)
    assert main(["gen-data", "--spec", str(tmp_path / "spec.toml")]) == 0
    return tmp_path


def write_config(root, variant):
    path = root / f"{variant}.toml"
    path.write_text(CONFIG.format(variant=variant))
    return path


def test_gen_data(workspace):
    tr = np.load(workspace / "data/train.npz")
    te = np.load(workspace / "data/test.npz")
    assert len(tr["labels"]) + len(te["labels"]) == 120
    assert tr["features"].shape[1] == 6


@pytest.mark.parametrize("variant", ["cosine", "vmf"])
def test_train_eval_calibrate_plot(workspace, variant, capsys, monkeypatch):
    monkeypatch.delenv("RUN_SEED", raising=False)
    cfg = write_config(workspace, variant)
    assert main(["train", "--config", str(cfg)]) == 0
    run = workspace / f"run_{variant}"
    for name in ("config.toml", "checkpoint.bin", "train_log.csv", "report.json", "per_instance.csv"):
        assert (run / name).exists(), name
    report = json.loads((run / "report.json").read_text())
    with open(run / "per_instance.csv") as f:
        rows = list(csv.DictReader(f))
    assert report["accuracy"] == pytest.approx(np.mean([int(r["correct"]) for r in rows]))
    assert len(rows) == report["count"]
    with open(run / "train_log.csv") as f:
        assert len(list(csv.DictReader(f))) == 3

    ck = str(run / "checkpoint.bin")
    data = str(workspace / "data/test.npz")
    assert main(["eval", "--checkpoint", ck, "--data", data, "--mode", "open"]) == 0
    assert main(["eval", "--checkpoint", ck, "--data", data, "--mode", "open", "--cosine-at-test"]) == 0
    plain = json.loads((run / "eval_open_set.json").read_text())
    cos = json.loads((run / "eval_open_set_cosine.json").read_text())
    assert plain["cosine_at_test"] is False and cos["cosine_at_test"] is True
    assert cos["distance"] == "cosine"

    assert main(["eval", "--checkpoint", ck, "--data", data, "--mode", "fixed",
                 "--val", str(workspace / "data/train.npz")]) == 0
    fixed = json.loads((run / "eval_fixed_set.json").read_text())
    assert fixed["temperature"] > 0

    capsys.readouterr()
    assert main(["calibrate", "--checkpoint", ck, "--val", str(workspace / "data/train.npz")]) == 0
    cal = json.loads(capsys.readouterr().out)
    assert cal["nll_after"] <= cal["nll_before"] + 1e-12

    assert main(["plot", "--report", str(run / "eval_fixed_set.json")]) == 0
    svg = (run / "eval_fixed_set.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_bessel_curves(tmp_path, capsys):
    out = tmp_path / "curves.svg"
    assert main(["bessel-curves", "--dims", "3,8", "--out", str(out)]) == 0
    assert out.exists()
    assert "n=   8" in capsys.readouterr().out


def test_usage_errors(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--checkpoint", "x"])
    assert exc.value.code == 2
    assert main(["train", "--config", str(workspace / "missing.toml")]) == 2
    bad = workspace / "bad.toml"
    bad.write_text('variant = "softmax"\ntrain_data = "data/train.npz"\n')
    assert main(["train", "--config", str(bad)]) == 2
    assert "variant" in capsys.readouterr().err
    cfg = write_config(workspace, "standard")
    assert main(["train", "--config", str(cfg)]) == 0
    ck = str(workspace / "run_standard/checkpoint.bin")
    assert main(["eval", "--checkpoint", ck, "--data", str(workspace / "data/test.npz"),
                 "--mode", "fixed", "--cosine-at-test"]) == 2


def test_run_seed_override(workspace, monkeypatch):
    cfg = write_config(workspace, "standard")
    monkeypatch.setenv("RUN_SEED", "99")
    assert main(["train", "--config", str(cfg)]) == 0
    report = json.loads((workspace / "run_standard/report.json").read_text())
    assert report["seed"] == 99 and report["seed_from_env"] is True
    assert "seed = 99" in (workspace / "run_standard/config.toml").read_text()


def test_replicates_summary(workspace, monkeypatch):
    monkeypatch.delenv("RUN_SEED", raising=False)
    cfg = write_config(workspace, "standard")
    assert main(["train", "--config", str(cfg), "--replicates", "2"]) == 0
    summary = json.loads((workspace / "run_standard/summary.json").read_text())
    assert summary["replicates"] == 2 and "accuracy_mean" in summary
    assert (workspace / "run_standard/rep1/report.json").exists()
