import filecmp
import os
import shutil

import numpy as np
import pytest

import distme
from distme import io
from distme.cli import main

DATA = os.path.join(os.path.dirname(distme.__file__), "data")
FIT_FILES = ["draws.csv", "latent.csv", "metrics.csv", "curves.csv", "surface.csv", "residuals.csv", "summary.txt"]


@pytest.fixture
def toy(tmp_path):
    for name in ("toy.csv", "toy.csv.schema.json", "toy.cfg"):
        shutil.copy(os.path.join(DATA, name), tmp_path / name)
    return tmp_path


def test_unknown_command_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_k0_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["downscale", "--input", "a.csv", "--k0", "many"])
    assert exc.value.code == 2


def test_fit_writes_artifacts_and_is_reproducible(toy):
    cfg = str(toy / "toy.cfg")
    assert main(["fit", "--config", cfg]) == 0
    assert main(["fit", "--config", cfg, "--output", str(toy / "again")]) == 0
    for name in FIT_FILES:
        path = toy / "toy_fit" / name
        assert path.exists()
        if name.endswith(".csv"):
            assert (toy / "toy_fit" / (name + ".schema.json")).exists()
        assert filecmp.cmp(path, toy / "again" / name, shallow=False), name
    summary = io.read_keyvalue(str(toy / "toy_fit" / "summary.txt"))
    assert summary["iterations"] == "10" and summary["family"] == "gaussian"


def test_fit_chain_overrides_reach_summary(toy):
    assert main(["fit", "--config", str(toy / "toy.cfg"), "--iterations", "30", "--burnin", "10",
                 "--thinning", "2"]) == 0
    summary = io.read_keyvalue(str(toy / "toy_fit" / "summary.txt"))
    assert (summary["iterations"], summary["burnin"], summary["draws"]) == ("30", "10", "10")
    draws = io.read_table(str(toy / "toy_fit" / "draws.csv"))
    assert len(draws["draw"]) == 10


def test_config_error_is_one_line(toy, capsys):
    bad = toy / "bad.cfg"
    bad.write_text("[data]\npath = toy.csv\n[model]\nfamily = Gausian\n[chain]\nthinning = x\n")
    assert main(["fit", "--config", str(bad)]) == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1
    assert "2 config error(s)" in err and "allowed values: beta, gaussian" in err


def test_missing_data_file_is_reported(toy, capsys):
    cfg = toy / "toy.cfg"
    cfg.write_text(cfg.read_text().replace("toy.csv", "absent.csv"))
    assert main(["fit", "--config", str(cfg)]) == 1
    assert "absent.csv" in capsys.readouterr().err


def test_simulate_one_replication(tmp_path):
    args = ["simulate", "--preset", "gaussian-s2", "--replications", "1", "--iterations", "120",
            "--burnin", "20", "--thinning", "1"]
    assert main(args + ["--output", str(tmp_path / "a")]) == 0
    assert main(args + ["--output", str(tmp_path / "b")]) == 0
    table = io.read_table(str(tmp_path / "a" / "summary.csv"))
    assert list(table["block"]).count("replication") == 3
    assert filecmp.cmp(tmp_path / "a" / "summary.csv", tmp_path / "b" / "summary.csv", shallow=False)


def test_application_pipeline(tmp_path):
    out = str(tmp_path)
    assert main(["simulate", "--preset", "application", "--scale", "0.002", "--output", out]) == 0
    inputs = []
    for name in ("ndvi_p1", "ndvi_p2", "ndvi_p3", "ndvi_p4", "er"):
        inputs += ["--input", os.path.join(out, name + ".csv")]
    cells = os.path.join(out, "cells.csv")
    assert main(["downscale", *inputs, "--cells", "60", "--k0", "8", "--output", cells]) == 0
    table = io.read_table(cells)
    assert len(table["cell"]) == 60
    assert {"ndvi_p1", "er_1", "er_3", "er_cov_13", "k_er"} <= set(table)
    cfg = os.path.join(out, "application.cfg")
    chain = ["--iterations", "150", "--burnin", "50", "--thinning", "1"]
    assert main(["fit", "--config", cfg, *chain]) == 0
    assert os.path.exists(os.path.join(out, "fit", "surface.csv"))
    assert main(["evaluate", "--config", cfg, "--folds", "2", "--table", os.path.join(out, "cmp.csv"),
                 *chain]) == 0
    scores = io.read_table(os.path.join(out, "fit", "evaluate", "scores.csv"))
    assert list(scores["fold"]) == ["0", "1", "S_R"]
    assert np.all(np.isfinite(scores["log"]))
    cmp = io.read_table(os.path.join(out, "cmp.csv"))
    assert list(cmp["model"]) == ["application"]
