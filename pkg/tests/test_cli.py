import json

import numpy as np
import pytest
from factories import blobs

from hoids.cli import main
from hoids.data import write_csv
from hoids.model import load_model


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ds = blobs(np.random.default_rng(3), n=200)
    write_csv(ds.subset(np.arange(150)), d / "train.csv")
    write_csv(ds.subset(np.arange(150, 200)), d / "test.csv")
    return d


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def test_train_eval_predict(files, capsys):
    model = files / "m.json"
    rc, out, err = run(capsys, "train", "--data", files / "train.csv", "--out", model)
    assert rc == 0 and "E_in = 0.0" in out
    assert "# effective config" in err
    assert (files / "m.trace.csv").read_text().startswith("task,iteration,objective")
    assert load_model(model).labels.names == ("normal", "attack1", "attack2")

    rc, out, _ = run(capsys, "eval", "--model", model, "--data", files / "test.csv",
                     "--out", files / "eval.csv")
    assert rc == 0 and "recall" in out
    assert (files / "eval.csv").read_text().splitlines()[-1].startswith("overall,")

    rc, _, _ = run(capsys, "predict", "--model", model, "--data", files / "test.csv",
                   "--out", files / "pred.csv")
    lines = (files / "pred.csv").read_text().splitlines()
    assert rc == 0 and lines[0] == "row,predicted,score" and len(lines) == 51


def test_binary_and_pca_training(files, capsys):
    rc, out, _ = run(capsys, "train", "--data", files / "train.csv", "--mode", "binary",
                     "--pca-rho", "0.9", "--out", files / "b.json")
    assert rc == 0
    m = load_model(files / "b.json")
    assert m.labels.names == ("normal", "abnormal") and m.pca is not None


def test_ig_and_pca(files, capsys):
    rc, out, _ = run(capsys, "ig", "--data", files / "train.csv", "--base", "2",
                     "--out", files / "ig.csv")
    assert rc == 0 and "bits" in out
    assert len((files / "ig.csv").read_text().splitlines()) == 5
    rc, out, _ = run(capsys, "pca", "--data", files / "train.csv", "--rho", "1.0")
    assert rc == 0 and out.startswith("k = 4 of 4")


def test_cv_and_sweep(files, capsys):
    rc, out, _ = run(capsys, "cv", "--data", files / "train.csv", "--repeats", 1, "--folds", 3,
                     "--max-iters", 50, "--out", files / "cv.csv")
    assert rc == 0 and out.startswith("3 runs")
    rc, out, _ = run(capsys, "cv", "--data", files / "train.csv", "--repeats", 1, "--folds", 3,
                     "--order", "low-ig", "--min-features", 3, "--max-iters", 50,
                     "--out", files / "sweep.csv")
    assert rc == 0 and len((files / "sweep.csv").read_text().splitlines()) == 3


def test_missing_input_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "m.json"
    rc, _, err = run(capsys, "train", "--data", tmp_path / "nope.csv", "--out", out)
    assert rc != 0 and "error:" in err
    assert not out.exists() and list(tmp_path.iterdir()) == []


def test_arity_mismatch(files, tmp_path, capsys):
    ds = blobs(np.random.default_rng(1), n=60, m=2)
    write_csv(ds, tmp_path / "narrow.csv")
    rc, _, err = run(capsys, "eval", "--model", files / "m.json", "--data", tmp_path / "narrow.csv")
    assert rc == 1 and "arity mismatch" in err


def test_simulate(files, tmp_path, capsys):
    sc = tmp_path / "s.ini"
    sc.write_text(f"""[scenario]
records_per_tick = 20
max_iters = 50

[level:field]
pipeline = ig:2+multi
bootstrap = {files / 'train.csv'}

[client:a]
level = field
replay = {files / 'test.csv'}
""")
    rc, out, _ = run(capsys, "simulate", "--scenario", sc, "--out", tmp_path / "r.json",
                     "--alerts", tmp_path / "alerts.log")
    assert rc == 0 and "aggregate confusion" in out
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["clients"]["a"]["classified"] == 50
    alerts = (tmp_path / "alerts.log").read_text().splitlines()
    assert len(alerts) == rep["clients"]["a"]["alerts"]


def test_repro_byte_identical(tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        rc, out, _ = run(capsys, "repro", "--experiment", "kdd-sampled", "--synthetic",
                         "--max-iters", 100, "--out", tmp_path / name)
        assert rc == 0 and "Bayes" in out
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_repro_errors(tmp_path, capsys):
    rc, _, err = run(capsys, "repro", "--experiment", "fig9")
    assert rc == 1 and "kdd-sampled" in err
    rc, _, err = run(capsys, "repro", "--experiment", "kdd-table1", "--data-dir", tmp_path)
    assert rc == 1 and "not found" in err


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and "hoids" in capsys.readouterr().out
