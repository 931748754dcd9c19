import csv
import json
import subprocess
import sys

import pytest

from grasplab.cli import main

SYN = ["--dataset", "synthetic", "--arch", "mlp", "--epochs", "5", "--batch-size", "32", "--lr", "0.05"]


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_bad_preset_exits_2(tmp_path, capsys):
    assert main(["report", "--arch", "vgg16", "--out", str(tmp_path)]) == 2
    assert "architecture" in capsys.readouterr().err


def test_bad_flag_value_exits_2(tmp_path):
    assert main(["report", "--epochs", "many", "--out", str(tmp_path)]) == 2
    assert main(["no-such-command"]) == 2


def test_bad_config_file_exits_2(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert main(["report", "--config", str(tmp_path / "c.json")]) == 2
    assert main(["report", "--config", str(tmp_path / "missing.json")]) == 2


def test_missing_model_exits_1(tmp_path):
    assert main(["invert", *SYN, "--model", str(tmp_path / "nope.grsl"), "--out", str(tmp_path)]) == 1


def test_report_on_synthetic_config(tmp_path, capsys):
    cfg = {"dataset": {"kind": "synthetic"}, "arch": "mlp", "train": {"epochs": 5, "batch_size": 32},
           "inversion": {"steps": 80, "restarts": 1}, "robustness": {"n_samples": 8},
           "lipschitz": {"n_points": 4, "n_pairs": 4}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    out = tmp_path / "run"
    # flags override the file
    assert main(["report", "--config", str(tmp_path / "c.json"), "--attack", "badnet", "--out", str(out)]) == 0
    assert "status=complete" in capsys.readouterr().out
    assert json.loads((out / "report.json").read_text())["attack"] == "badnet"


def test_stagewise_subcommands(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["poison", *SYN, "--attack", "grasp", "--out", out]) == 0
    counts = json.loads(capsys.readouterr().out)
    assert counts == {"clean": 300, "noisy_source": 1, "trigger_target": 18}
    model = str(tmp_path / "m.grsl")
    clean = str(tmp_path / "clean.grsl")
    assert main(["train", *SYN, "--poisoned", str(tmp_path / "poisoned.npz"), "--model-out", model]) == 0
    assert main(["train", *SYN, "--model-out", clean]) == 0
    assert main(["invert", *SYN, "--model", model, "--steps", "80", "--restarts", "1", "--out", out]) == 0
    assert main(["robustness", *SYN, "--model", model, "--n-samples", "5", "--out", out]) == 0
    assert _rows(tmp_path / "robustness.csv")[0][:2] == ["sample_id", "kind"]
    capsys.readouterr()
    assert main(["metrics", *SYN, "--model", model, "--recovered", str(tmp_path / "recovered_trigger.json"),
                 "--clean-model", clean, "--out", out]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["epsilon3"] is not None and 0 <= rep["asr_before"] <= 1


def test_poison_requires_an_attack(tmp_path):
    assert main(["poison", *SYN, "--attack", "none", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("check, header", [
    ("pwl", ["hull_width", "probability"]),
    ("pl", ["k", "gap", "bound"]),
    ("bound", ["n", "bound", "raw"]),
])
def test_theory_writes_csv(tmp_path, check, header):
    path = tmp_path / f"{check}.csv"
    extra = ["--n-inits", "200"] if check == "pwl" else []
    assert main(["theory", check, "--out", str(path), *extra]) == 0
    rows = _rows(path)
    assert rows[0] == header and len(rows) > 1


def test_theory_ratio_rows(tmp_path):
    path = tmp_path / "r.csv"
    assert main(["theory", "ratio", "--instances", "3", "--out", str(path)]) == 0
    rows = _rows(path)[1:]
    assert [r[0] for r in rows] == ["0", "1", "2"]
    assert all(abs(float(r[1]) - 2.0) < 1e-5 for r in rows)


def test_theory_bound_example(tmp_path):
    path = tmp_path / "b.csv"
    assert main(["theory", "bound", "--b1", "2", "--b2", "1.5", "--n", "1", "--out", str(path)]) == 0
    n, bound, raw = _rows(path)[1]
    assert float(bound) == 1.0 and float(raw) == pytest.approx(2.0)


def test_zoo_auc_command(tmp_path, capsys):
    manifests = {}
    for name, attack, seed in (("c0", "none", 1), ("c1", "none", 2), ("b0", "badnet", 1), ("b1", "badnet", 2)):
        d = tmp_path / name
        assert main(["report", *SYN, "--attack", attack, "--seed", str(seed), "--steps", "60",
                     "--restarts", "1", "--n-samples", "4", "--out", str(d)]) == 0
        manifests[name] = str(d / "manifest.json")
    capsys.readouterr()
    out = tmp_path / "zoo.csv"
    assert main(["zoo-auc", "--clean", manifests["c0"], manifests["c1"],
                 "--backdoored", manifests["b0"], manifests["b1"], "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("auc=")
    assert sorted(r[0] for r in _rows(out)[1:]) == ["b0", "b1", "c0", "c1"]
    assert main(["zoo-auc", "--clean", manifests["c0"], "--backdoored", manifests["b0"], "--out", str(out)]) == 1


def test_module_entry_point_version():
    res = subprocess.run([sys.executable, "-m", "grasplab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
