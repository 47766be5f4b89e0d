import json
import subprocess
import sys

import pandas as pd
import pytest

from dlmm import cli
from dlmm.cli import build_parser, main
from dlmm.exceptions import NumericalError
from dlmm.simulate import SimulationConfig

TOY = "eu,obs,time,y\n1,a,1,1\n1,b,1,3\n2,c,1,11\n2,d,1,13\n"


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(TOY)
    return path


@pytest.fixture
def cfg_json(tmp_path):
    path = tmp_path / "cfg.json"
    SimulationConfig(n=3, t=3, K=2, L=2).to_json(path)
    return path


@pytest.fixture
def panel(tmp_path, cfg_json):
    path = tmp_path / "panel.csv"
    assert main(["simulate", "--config", str(cfg_json), "--seed", "3", "--out", str(path)]) == 0
    return path


def test_simulate_twice_identical(tmp_path, cfg_json):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["simulate", "--config", str(cfg_json), "--out", str(p), "--seed", "42"]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    main(["simulate", "--config", str(cfg_json), "--out", str(c), "--seed", "43"])
    assert c.read_bytes() != a.read_bytes()


def test_seed_from_environment(tmp_path, cfg_json, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--config", str(cfg_json), "--out", str(a), "--seed", "7"])
    monkeypatch.setenv("DLMM_SEED", "7")
    main(["simulate", "--config", str(cfg_json), "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("DLMM_SEED", "seven")
    assert main(["simulate", "--config", str(cfg_json), "--out", str(b)]) == 1


def test_simulate_complete_and_config(tmp_path, cfg_json):
    out, cfg_out = tmp_path / "full.csv", tmp_path / "eff.json"
    assert main(["simulate", "--config", str(cfg_json), "--complete", "--out", str(out), "--seed", "9", "--write-config", str(cfg_out)]) == 0
    assert len(pd.read_csv(out)) == 3 * 2 * 3 * 6 * 2  # n*M*t*J*L with J = K*t
    assert json.loads(cfg_out.read_text())["seed"] == 9


def test_fit_toy(tmp_path, toy_csv):
    out = tmp_path / "fit.json"
    args = ["fit", "--model", "proposed", "--groups", "2", "--in", str(toy_csv), "--criterion", "reml", "--out", str(out)]
    assert main(args) == 0
    fit = json.loads(out.read_text())
    assert fit["variance_components"]["sigma_eps2"] == pytest.approx(2, rel=1e-6)
    assert fit["variance_components"]["sigma_b2"] == pytest.approx(49, rel=1e-6)
    assert fit["blups"]["eu"]["2"] == pytest.approx(4.9, rel=1e-6)


def test_fit_stdout_and_models(panel, capsys):
    for model in ("fixed", "deaton", "randint", "manova"):
        assert main(["fit", "--model", model, "--in", str(panel)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["model"] == model and out["mse"] >= 0


def test_group_and_summary(tmp_path, panel):
    out, summ = tmp_path / "groups.csv", tmp_path / "summary.csv"
    assert main(["group", "--in", str(panel), "-G", "2", "--out", str(out), "--summary", str(summ)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["eu", "time", "obs", "rep", "group"]
    assert set(frame["group"]) == {1, 2}
    assert summ.exists()


@pytest.mark.parametrize("fmt", ["csv", "json", "text"])
def test_anova_formats(tmp_path, panel, fmt):
    out = tmp_path / f"anova.{fmt}"
    assert main(["anova", "--in", str(panel), "--model", "proposed", "--format", fmt, "--out", str(out)]) == 0
    text = out.read_text()
    assert "eta" in text
    if fmt == "json":
        assert json.loads(text)["model"] == "proposed"


def test_manova(tmp_path, panel):
    out = tmp_path / "manova.csv"
    assert main(["manova", "--in", str(panel), "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame["term"]) == ["A", "A:time", "time"]
    assert frame["p"].between(0, 1).all()
    js = tmp_path / "manova.json"
    assert main(["manova", "--in", str(panel), "--format", "json", "--terms", "A", "--out", str(js)]) == 0
    assert set(json.loads(js.read_text())[0]["statistics"]) == {"pillai", "wilks", "hotelling_lawley", "roy"}


def test_compare_writes_report(tmp_path, cfg_json):
    out = tmp_path / "report"
    args = ["compare", "--config", str(cfg_json), "--sweep", "dAT=0,0.5,1", "--reps", "3", "--out", str(out)]
    assert main(args) == 0
    assert (out / "report.json").exists()
    assert list(out.glob("*.svg"))
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    out2 = tmp_path / "report2"
    assert main(args[:-1] + [str(out2), "--threads", "2"]) == 0
    assert {p.name: p.read_bytes() for p in out2.iterdir()} == first


def test_diagnose(tmp_path, panel):
    out = tmp_path / "diag"
    assert main(["diagnose", "--in", str(panel), "--out", str(out)]) == 0
    for name in ("acf.csv", "correlogram.svg", "tests.csv", "summary.json", "qq_eps.csv"):
        assert (out / name).exists()
    tests = pd.read_csv(out / "tests.csv")
    assert {"anderson-darling", "bartlett"} <= set(tests["test"])
    assert 0 <= json.loads((out / "summary.json").read_text())["acf_band_fraction"] <= 1


def test_exit_code_validation(tmp_path, toy_csv, capsys):
    assert main(["fit", "--in", str(tmp_path / "missing.csv")]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["fit", "--in", str(toy_csv), "--model", "bogus"]) == 1
    assert main([]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("eu,obs,time,y\n1,a,1,x\n")
    assert main(["fit", "--in", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_exit_code_numerical(toy_csv, monkeypatch, capsys):
    def broken(*a, **k):
        raise NumericalError("not positive definite")

    monkeypatch.setattr(cli, "fit_model", broken)
    assert main(["fit", "--in", str(toy_csv)]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_help_lists_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"simulate", "group", "fit", "anova", "manova", "compare", "diagnose"}
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


def test_help_exit_zero():
    res = subprocess.run([sys.executable, "-m", "dlmm.cli", "fit", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "--criterion" in res.stdout
    res = subprocess.run([sys.executable, "-m", "dlmm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "diagnose" in res.stdout
