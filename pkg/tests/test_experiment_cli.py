import csv
import hashlib

import numpy as np
import pytest

from ecdiscovery.cli import main
from ecdiscovery.config import parse_config
from ecdiscovery.errors import CompatibilityError, ConfigurationError
from ecdiscovery.experiment import (
    held_out_probe, identify_field, level_tag, ranked_scores, run_experiment, split_seed,
)
from ecdiscovery.field_core import read_dataset, read_field, write_field
from ecdiscovery.svm_classifier import load_model

TINY = """
[experiment]
name = tiny
grid.points = 48
grid.extent = -1 1
grid.time_steps = 20
grid.time_extent = 0 0.5
n_per_model = 10
noise_levels = 0 0.3
repeats = 2
C_grid = 1 10
gamma_factors = 0.5 1
k_folds = 2
smoothing = auto

[model 1]
family = burgers_visc
bc = periodic
ic.n_bumps = 0 0
ic.n_modes = 1 1

[model 2]
family = burgers_adv
bc = periodic
ic.n_bumps = 0 0
ic.n_modes = 1 1
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_level_tags_and_split_seeds():
    assert level_tag(0.0) == "noise00" and level_tag(0.5) == "noise50"
    assert split_seed(7, 0) == split_seed(7, 0) != split_seed(7, 1)


def test_run_experiment_outputs_and_manifest(tmp_path):
    cfg = parse_config(TINY, "tiny.cfg")
    rep = run_experiment(cfg, tmp_path / "run", sparse=True)
    assert rep.complete
    assert set(rep.levels) == {0.0, 0.3}
    for lv in rep.levels.values():
        assert len(lv.accuracies) == 2 and 0 <= lv.mean <= 1
    root = tmp_path / "run"
    rows = list(csv.reader(l for l in (root / "manifest.csv").read_text().splitlines() if not l.startswith("#")))
    assert rows[0] == ["path", "bytes", "sha256", "status"]
    listed = {r[0]: r for r in rows[1:]}
    for name in ("config.cfg", "datasets/noise00.csv", "models/noise30.ecsv", "table1.csv", "summary.txt", "candidates.csv"):
        assert listed[name][3] == "complete"
        assert listed[name][2] == sha(root / name)
    for name in ("datasets/noise00.csv", "table1.csv", "accuracy.csv", "pca/noise30.csv"):
        assert (root / name).read_text().startswith("# ecdiscovery=")
    assert rep.identification.source.startswith("in-library resimulation")
    assert read_dataset(root / "datasets/noise30.csv").meta["smoothing"] == "auto"
    table = (root / "table1.csv").read_text().splitlines()
    assert any(l.startswith("class,name,precision_noise00") for l in table)
    summary = (root / "summary.txt").read_text()
    assert "identified model" in summary and "sparse-regression candidates" in summary


def test_failed_stage_marks_manifest_incomplete(tmp_path):
    bad = TINY.replace("family = burgers_adv\n", "family = burgers_adv\nlam1 = -1e300 -1e299\n")
    cfg = parse_config(bad, "bad.cfg")
    with pytest.raises(ConfigurationError, match=r"^\[dataset\]"):
        run_experiment(cfg, tmp_path / "run")
    text = (tmp_path / "run" / "manifest.csv").read_text()
    assert "incomplete" in text and "dataset" in text


def test_identify_field_checks_thresholds(tmp_path):
    cfg = parse_config(TINY, "tiny.cfg")
    rep = run_experiment(cfg, tmp_path / "run")
    model = rep.levels[0.0].model
    probe, truth = held_out_probe(cfg, 1)
    label, scores = identify_field(probe, model)
    assert label in (1, 2) and set(scores) == {1, 2}
    assert ranked_scores(scores)[0][0] == label
    with pytest.raises(CompatibilityError):
        identify_field(probe, model, n_thresholds=32)


def test_cli_full_chain(tiny_cfg, tmp_path, capsys):
    d = tmp_path
    assert main(["simulate", "--config", str(tiny_cfg), "--which", "2", "--out", str(d / "f.ecf")]) == 0
    assert read_field(d / "f.ecf").grid.shape == (20, 48)
    assert main(["noise", "--field", str(d / "f.ecf"), "--noise", "0.2", "--seed", "1", "--out", str(d / "n.ecf")]) == 0
    assert main(["ec", "--field", str(d / "n.ecf"), "--out", str(d / "ec.csv"), "--smoothing", "auto"]) == 0
    assert (d / "ec.csv").read_text().splitlines()[1] == "threshold,chi"
    assert main(["dataset", "--config", str(tiny_cfg), "--noise", "0.2", "--out", str(d / "ds")]) == 0
    ds = d / "ds" / "noise20.csv"
    assert main(["train", "--dataset", str(ds), "--config", str(tiny_cfg), "--model", str(d / "m.ecsv")]) == 0
    assert load_model(d / "m.ecsv").smoothing == "auto"
    assert main(["evaluate", "--dataset", str(ds), "--model", str(d / "m.ecsv"), "--out", str(d / "ev.csv")]) == 0
    assert "accuracy," in (d / "ev.csv").read_text()
    capsys.readouterr()
    assert main(["identify", "--field", str(d / "n.ecf"), "--model", str(d / "m.ecsv")]) == 0
    out = capsys.readouterr().out
    assert "identified model:" in out and "votes" in out
    assert main(["project", "--dataset", str(ds), "--out", str(d / "pca.csv")]) == 0
    assert main(["sparse", "--field", str(d / "f.ecf"), "--k", "2", "--out", str(d / "c.csv")]) == 0
    assert (d / "c.csv").exists()


def test_cli_exit_codes(tiny_cfg, tmp_path, capsys):
    assert main(["identify", "--field", str(tmp_path / "no.ecf"), "--model", "x"]) == 4
    assert main(["experiment", "--config", str(tmp_path / "no.cfg")]) == 4
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\nbogus = 1\n")
    assert main(["experiment", "--config", str(bad)]) == 2
    assert main(["dataset"]) == 2
    (tmp_path / "junk.ecf").write_bytes(b"JUNKJUNKJUNK")
    assert main(["ec", "--field", str(tmp_path / "junk.ecf")]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["nosuchcommand"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "error:" in err


def test_cli_noise_out_of_range(tmp_path):
    g_field = tmp_path / "f.ecf"
    from ecdiscovery.field_core import Field, make_grid

    write_field(Field(make_grid([8], [(0, 1)], 5), np.arange(40.0)), g_field)
    assert main(["noise", "--field", str(g_field), "--noise", "0.9"]) == 2


def test_cli_experiment_thread_determinism(tiny_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["experiment", "--config", str(tiny_cfg), "--seed", "3", "--out", str(a), "--threads", "1"]) == 0
    assert main(["experiment", "--config", str(tiny_cfg), "--seed", "3", "--out", str(b), "--threads", "2"]) == 0
    for name in ("datasets/noise00.csv", "datasets/noise30.csv", "accuracy.csv", "table1.csv", "models/noise00.ecsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert "seed=3" in (a / "datasets/noise00.csv").read_text().splitlines()[0]
