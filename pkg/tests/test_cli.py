import json

import numpy as np
import pytest

from ksdbayes.cli import main
from ksdbayes.io import emit_table


@pytest.fixture
def normal_csv(tmp_path):
    path = tmp_path / "x.csv"
    assert main(["gen-data", "--n", "60", "--seed", "4", "--epsilon", "0.1", "--out", str(path)]) == 0
    return path


def test_gen_data_writes_rows(normal_csv):
    x = np.loadtxt(normal_csv, delimiter=",", ndmin=2)
    assert x.shape == (60, 1)


def test_ksd_eval_prints_value(normal_csv, capsys):
    assert main(["ksd-eval", "--data", str(normal_csv), "--theta", "1.0"]) == 0
    assert float(capsys.readouterr().out) >= 0


def test_fit_conjugate_json(normal_csv, tmp_path, capsys):
    out = tmp_path / "post.json"
    assert main(["fit-conjugate", "--data", str(normal_csv), "--beta", "0.5", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["beta"] == 0.5 and len(d["mean"]) == 1 and d["sd"][0] > 0
    assert json.loads(capsys.readouterr().out) == d


def test_beta_subcommand(normal_csv, capsys):
    assert main(["beta", "--data", str(normal_csv), "--weight", "rational"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert 0 < d["beta"] <= 1


def test_fit_mcmc_outputs(normal_csv, tmp_path):
    out = tmp_path / "chain"
    assert main(["fit-mcmc", "--data", str(normal_csv), "--draws", "500", "--seed", "1",
                 "--out", str(out)]) == 0
    draws = np.loadtxt(out / "draws.csv", delimiter=",", skiprows=1, ndmin=2)
    side = json.loads((out / "draws.json").read_text())
    assert draws.shape == (500, 1) and side["seed"] == 1 and side["n"] == 60


def test_pif_subcommand(normal_csv, tmp_path):
    out = tmp_path / "pif.csv"
    assert main(["pif", "--data", str(normal_csv), "--y", "5", "--resolution", "201",
                 "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "theta,standard_bayes,ksd_bayes"
    assert json.loads((tmp_path / "pif.csv.json").read_text())["y"] == 5.0


def test_run_subcommand(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "normal-location", "seed": 2}))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "manifest.json").exists()


@pytest.mark.parametrize("argv", [[], ["nonsense"], ["ksd-eval", "--data", "x.csv"],
                                  ["fit-conjugate", "--data", "x.csv", "--beta", "-1"],
                                  ["fit-conjugate", "--data", "x.csv", "--beta", "big"]])
def test_usage_errors_exit_two(argv, capsys):
    assert main(argv) == 2


def test_constant_data_exits_two(tmp_path):
    path = tmp_path / "flat.csv"
    emit_table(np.full((5, 1), 0.3), path)
    assert main(["beta", "--data", str(path)]) == 2


def test_missing_data_file_exits_two(tmp_path):
    assert main(["beta", "--data", str(tmp_path / "none.csv")]) == 2


def test_bad_config_exits_two(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "normal-location", "unknown": 1}))
    assert main(["run", str(cfg)]) == 2


def test_strict_mode_exits_three_on_flags(tmp_path):
    # two observations give a rank-deficient score covariance, which needs a ridge
    path = tmp_path / "two.csv"
    emit_table(np.random.default_rng(130).normal(size=(2, 5)), path)
    argv = ["beta", "--data", str(path), "--model", "liu"]
    assert main(argv) == 0
    assert main(["--strict"] + argv) == 3
