import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from tvdml.cli import EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION, main

SCHEMA = """baseline = ["z1", "z2"]
modifiers = ["x1", "x2"]
prognostic = ["u1", "u2", "u3", "u4", "u5", "u6", "u7", "u8"]
"""


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def simulate_to(tmp_path, name="sim", n=200, T=100, seed=1, extra=""):
    cfg = write(tmp_path / f"{name}.toml",
                f'out = "{name}"\n[scenario]\ncase = "I"\nn = {n}\nT = {T}\nseed = {seed}\n{extra}')
    assert main(["simulate", "--config", str(cfg)]) == 0
    return tmp_path / name


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    return tmp, simulate_to(tmp, n=150, T=8, seed=3)


def fit_config(tmp, out, method="proposed", gamma=0.3, data="sim/panel.csv", extra=""):
    return write(tmp / f"{out}.toml", f'out = "{out}"\n[data]\npath = "{data}"\n{SCHEMA}'
                                      f'[estimator]\nmethod = "{method}"\ngamma = {gamma}\n{extra}')


def test_simulate_files_and_observed_fraction(tmp_path, capsys):
    out = simulate_to(tmp_path)
    assert "observed=" in capsys.readouterr().out
    panel = pd.read_csv(out / "panel.csv", keep_default_na=False)
    assert len(panel) == 200 * 100
    assert abs((panel["y"] != "NA").mean() - 0.70) < 0.02
    truth = json.loads((out / "truth.json").read_text())
    assert np.asarray(truth["beta"]).shape == (100, 5)
    assert truth["scenario"]["seed"] == 1


def test_simulate_without_missingness(tmp_path):
    out = simulate_to(tmp_path, n=20, T=5, extra="missing_prob = 0.0\n")
    panel = pd.read_csv(out / "panel.csv", keep_default_na=False)
    assert (panel["y"] != "NA").mean() == 1.0


def test_simulate_is_byte_identical(tmp_path):
    cfg = write(tmp_path / "s.toml", '[scenario]\ncase = "I"\nn = 30\nT = 6\nseed = 5\n')
    for out in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    for f in ("panel.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override(tmp_path):
    cfg = write(tmp_path / "s.toml", '[scenario]\ncase = "I"\nn = 10\nT = 3\nseed = 1\n')
    assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "truth.json").read_text())["scenario"]["seed"] == 9


def test_fit_outputs(small_sim, capsys):
    tmp, _ = small_sim
    assert main(["fit", "--config", str(fit_config(tmp, "fit"))]) == 0
    assert "hotelling stat=" in capsys.readouterr().out
    out = json.loads((tmp / "fit" / "fit.json").read_text())
    assert np.asarray(out["beta"]).shape == (8, 5)
    assert out["method"] == "proposed" and out["gamma"] == 0.3
    effects = pd.read_csv(tmp / "fit" / "effects.csv")
    assert len(effects) == 40


def test_fit_no_dml_is_tagged(small_sim):
    tmp, _ = small_sim
    assert main(["fit", "--config", str(fit_config(tmp, "nodml", method="no-dml"))]) == 0
    assert json.loads((tmp / "nodml" / "fit.json").read_text())["method"] == "no-dml"


def test_fit_all_treated_names_time(small_sim, capsys):
    tmp, sim = small_sim
    panel = pd.read_csv(sim / "panel.csv", keep_default_na=False, dtype=str)
    before = (sim / "panel.csv").read_bytes()
    panel.loc[panel["time"] == "4", "a"] = "1"
    panel.to_csv(tmp / "treated.csv", index=False)
    code = main(["fit", "--config", str(fit_config(tmp, "bad", data="treated.csv"))])
    assert code == EXIT_ESTIMATION
    assert "t=4" in capsys.readouterr().err
    assert (sim / "panel.csv").read_bytes() == before


def test_tune_singleton_and_full_grid(small_sim, capsys):
    tmp, _ = small_sim
    cfg = fit_config(tmp, "tune1", extra="[tune]\ngamma_grid = [0.3]\n")
    assert main(["tune", "--config", str(cfg)]) == 0
    assert "chosen gamma=0.3" in capsys.readouterr().out
    assert main(["tune", "--config", str(fit_config(tmp, "tune11"))]) == 0
    grid = pd.read_csv(tmp / "tune11" / "tune.csv")
    assert len(grid) == 11
    np.testing.assert_allclose(grid["gamma"], np.round(np.arange(11) / 10, 1))


def test_benchmark_single_replicate(tmp_path, capsys):
    cfg = write(tmp_path / "b.toml", 'out = "bench"\n[scenario]\ncase = "I"\nn = 120\nT = 4\nseed = 2\n'
                                     '[benchmark]\nreps = 1\nmethods = ["proposed-known", "no-dml"]\n')
    assert main(["benchmark", "--config", str(cfg)]) == 0
    assert "failures: proposed-known=0 no-dml=0" in capsys.readouterr().out
    metrics = pd.read_csv(tmp_path / "bench" / "metrics.csv", keep_default_na=False)
    assert (metrics["sd_e-2"] == "NA").all()
    assert len(pd.read_csv(tmp_path / "bench" / "raw.csv")) == 2 * 4 * 5


def _report(tmp, beta, span=1.0, truth=None):
    T, d = beta.shape
    fit = {"beta": beta.tolist(), "coefficients": [f"c{k}" for k in range(d)], "times": list(range(1, T + 1))}
    write(tmp / "f.json", json.dumps(fit))
    extra = ""
    if truth is not None:
        write(tmp / "t.json", json.dumps({"beta": truth.tolist()}))
        extra = 'truth = "t.json"\n'
    cfg = write(tmp / "r.toml", f'out = "rep"\n[report]\nfit = "f.json"\nspan = {span}\n{extra}')
    assert main(["report", "--config", str(cfg)]) == 0
    return pd.read_csv(tmp / "rep" / "smoothed.csv")


def test_report_constant_and_line(tmp_path):
    const = _report(tmp_path, np.full((12, 2), 0.4), span=0.5)
    np.testing.assert_allclose(const["smoothed"], 0.4, atol=1e-9)
    line = np.column_stack([0.1 * np.arange(12), 1 - 0.05 * np.arange(12)])
    out = _report(tmp_path, line, span=1.0, truth=line)
    np.testing.assert_allclose(out["smoothed"], out["estimate"], atol=1e-8)
    np.testing.assert_allclose(out["truth"], line.ravel())
    assert list(out.columns) == ["t", "coefficient", "estimate", "smoothed", "se", "lo", "hi", "truth"]


def test_report_tracks_truth(tmp_path):
    sim = simulate_to(tmp_path, n=500, T=60, seed=4)
    assert main(["fit", "--config", str(fit_config(tmp_path, "fit"))]) == 0
    cfg = write(tmp_path / "r.toml", 'out = "rep"\n[report]\nfit = "fit/fit.json"\n'
                                     'truth = "sim/truth.json"\nspan = 0.5\n')
    assert main(["report", "--config", str(cfg)]) == 0
    rep = pd.read_csv(tmp_path / "rep" / "smoothed.csv")
    icpt = rep[rep["coefficient"] == "intercept"]
    inside = ((icpt["lo"] <= icpt["truth"]) & (icpt["truth"] <= icpt["hi"])).mean()
    assert inside >= 0.8
    assert sim.exists()


def test_exit_codes(tmp_path, capsys):
    assert main(["fit", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    write(tmp_path / "broken.toml", "[scenario\n")
    assert main(["simulate", "--config", str(tmp_path / "broken.toml")]) == EXIT_CONFIG
    write(tmp_path / "alpha.toml", 'alpha = 1.5\n[scenario]\ncase = "I"\n')
    assert main(["simulate", "--config", str(tmp_path / "alpha.toml")]) == EXIT_CONFIG
    write(tmp_path / "nodata.toml", f'[data]\npath = "absent.csv"\n{SCHEMA}')
    assert main(["fit", "--config", str(tmp_path / "nodata.toml")]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "config error" in err and "absent.csv" in err


def test_json_config_and_module_entry_point(tmp_path):
    cfg = write(tmp_path / "s.json", json.dumps({"out": "j", "scenario": {"case": "II", "n": 10, "T": 3}}))
    proc = subprocess.run([sys.executable, "-m", "tvdml", "simulate", "--config", str(cfg)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert "simulated case II: n=10 T=3" in proc.stdout
    assert (tmp_path / "j" / "panel.csv").exists()
