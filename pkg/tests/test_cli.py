import json

import pytest

from survupdate.cli import EXIT_CONFIG, EXIT_IO, main
from survupdate.core import BayesPHModel, CoxModel, Dataset, load_model


def test_simulate_fit_evaluate(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--scenario", "NewTreatment", "--seed", "4", "--out", str(sim)]) == 0
    assert len(Dataset.from_csv(sim / "dev.csv")) == 10000
    m0 = tmp_path / "m0.json"
    assert main(["fit", "--data", str(sim / "dev.csv"), "--covariates", "age,prognostic_index,comorbidity",
                 "--out", str(m0)]) == 0
    assert isinstance(load_model(m0), CoxModel)
    m1 = tmp_path / "m1.json"
    assert main(["fit", "--data", str(sim / "period_2.csv"), "--model", str(m0), "--strategy", "bayes_quarterly",
                 "--period", "2", "--out", str(m1)]) == 0
    m = load_model(m1)
    assert isinstance(m, BayesPHModel) and "treatment" in m.spec.names
    capsys.readouterr()
    assert main(["evaluate", "--model", str(m1), "--data", str(sim / "period_3.csv"), "--period", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["period"] == 3 and 0 <= out["c_index"] <= 1


def test_study_and_compare(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_sim": 5, "seed": 1, "n_draws": 100,
                               "scenario": {"name": "IncreasingEvents", "n_dev": 2000}}))
    out = tmp_path / "study"
    assert main(["study", "--config", str(cfg), "--n-sim", "2", "--strategies",
                 "no_update,recalibrate_quarterly", "--out", str(out), "--quiet"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["plan"]["n_sim"] == 2  # the flag wins over the file
    assert manifest["plan"]["scenario"]["name"] == "IncreasingEvents"
    assert manifest["plan"]["scenario"]["n_dev"] == 2000
    capsys.readouterr()
    assert main(["compare", "--a", str(out / "results.csv"), "--strategy-a", "recalibrate_quarterly",
                 "--strategy-b", "no_update", "--period", "3", "--metric", "cal_intercept"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["n"] == 2 and 0 < res["p_value"] <= 1


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["study", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    bad.write_text(json.dumps({"colour": 1}))
    assert main(["study", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["study", "--n-sim", "0", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["study", "--strategies", "shrink", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["study", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == EXIT_IO
    assert main(["evaluate", "--model", str(tmp_path / "missing.json"), "--data", str(bad)]) == EXIT_IO
    with pytest.raises(SystemExit):
        main(["study", "--scenario", "Nope", "--out", "x"])
