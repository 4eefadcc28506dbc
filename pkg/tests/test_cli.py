import csv
import json
import math
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest

from ubot import cli
from ubot.measures import PointCloud, save_point_cloud_csv

SMALL = {
    "outlier": {"n": 6, "distances": [0, 10, 100], "m": 3, "ks": [5, 20], "reps": 3},
    "plan-viz": {"ms": [2], "taus": [10, 1, 0.1]},
    "concentration": {"settings": [[20, 5, 10]], "reps": 20, "ref_samples": 200,
                      "marginal": {"n": 4, "m": 2, "k": 20, "reps": 20}},
    "flow": {"n": 40, "iterations": 6, "m": 8, "taus": [5, "inf"], "snapshot_every": 3},
    "jumbot": {"n_src": 120, "n_tgt": 120, "epochs": 1, "warmup": 10, "m": 30},
    "solve": {"cost": [[0.0, 1.0], [1.0, 0.0]], "epsilon": 0.1, "tau": 1.0},
}


def run(tmp_path, experiment, params, seed=0, name="out", extra=()):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(params))
    out = tmp_path / name
    code = cli.main([experiment, "--config", str(cfg), "--seed", str(seed), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("experiment", list(SMALL))
def test_rerun_is_byte_identical(tmp_path, experiment):
    code1, out1 = run(tmp_path, experiment, SMALL[experiment], seed=7, name="a")
    code2, out2 = run(tmp_path, experiment, SMALL[experiment], seed=7, name="b")
    assert code1 == code2 == 0
    files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
    assert files1 == files2 and files1
    for rel in files1:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel


@pytest.mark.parametrize("experiment", ["outlier", "plan-viz", "flow"])
def test_svgs_are_self_contained_xml(tmp_path, experiment):
    code, out = run(tmp_path, experiment, SMALL[experiment])
    assert code == 0
    svgs = list(out.rglob("*.svg"))
    assert svgs
    for path in svgs:
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")
        for el in root.iter():
            assert not el.tag.endswith(("image", "use", "script"))
            for key, val in el.attrib.items():
                assert not key.endswith("href"), path
                assert "url(" not in val or "url(#" in val, path


def test_csv_headers(tmp_path):
    expected = {
        "outlier": {"outlier.csv": "distance,loss,k,mean,std"},
        "plan-viz": {"plans.csv": "method,m,tau,i,j,value,normalized",
                     "plan_summary.csv": "method,m,tau,mass,cross_label_mass",
                     "tau_sweep.csv": "tau,mass,cross_label_mass"},
        "concentration": {"concentration.csv": "n,m,k,rep,estimate,deviation,bound,within",
                          "concentration_summary.csv": "n,m,k,reference,reference_se,coverage,delta",
                          "marginal_coverage.csv": "coverage,bound,max_plan_mass,max_gap"},
        "flow": {"trajectory_tau5.0.csv": "iter,point_id,x0,x1", "loss_tauinf.csv": "iter,loss",
                 "flow_summary.csv": "tau,purity,final_loss,converged"},
        "jumbot": {"report_tau1.0.csv": "epoch,src_acc,tgt_acc,transfer_term,cross_label_mass",
                   "jumbot_summary.csv": "tau,src_acc,tgt_acc,cross_label_mass"},
    }
    for experiment, files in expected.items():
        code, out = run(tmp_path, experiment, SMALL[experiment], name=experiment)
        assert code == 0
        for fname, header in files.items():
            assert (out / fname).read_text().splitlines()[0] == header, (experiment, fname)


def test_outlier_records(tmp_path):
    code, out = run(tmp_path, "outlier", SMALL["outlier"])
    rows = read_csv(out / "outlier.csv")
    uot = {float(r["distance"]): float(r["mean"]) for r in rows if r["loss"] == "uot"}
    bound = {float(r["distance"]): float(r["mean"]) for r in rows if r["loss"] == "uot-bound"}
    assert all(uot[d] <= bound[d] + 1e-8 for d in uot)
    ks = {int(r["k"]) for r in rows if r["loss"] == "mb-uot"}
    assert ks == {5, 20}


def test_plan_viz_balanced_marginals(tmp_path):
    code, out = run(tmp_path, "plan-viz", {"ms": []})
    rows = [r for r in read_csv(out / "plans.csv") if r["method"] == "ot"]
    P = np.zeros((10, 10))
    for r in rows:
        P[int(r["i"]), int(r["j"])] = float(r["value"])
    np.testing.assert_allclose(P.sum(axis=1), 0.1, atol=1e-9)
    np.testing.assert_allclose(P.sum(axis=0), 0.1, atol=1e-9)


def test_plan_viz_tau_trend(tmp_path):
    params = {"ms": [], "taus": [100, 30, 10, 3, 1, 0.3, 0.1]}
    code, out = run(tmp_path, "plan-viz", params)
    masses = [float(r["cross_label_mass"]) for r in read_csv(out / "tau_sweep.csv")]
    steps = [b <= a + 1e-12 for a, b in zip(masses, masses[1:])]
    assert sum(steps) >= 0.8 * len(steps)
    assert masses[-1] < masses[0]


def test_plan_viz_single_class(tmp_path):
    gen = np.random.default_rng(0)
    save_point_cloud_csv(PointCloud(gen.standard_normal((6, 2)), np.zeros(6, int)), tmp_path / "s.csv")
    save_point_cloud_csv(PointCloud(gen.standard_normal((6, 2)) + 1, np.zeros(6, int)), tmp_path / "t.csv")
    params = {"ms": [2], "source_csv": str(tmp_path / "s.csv"), "target_csv": str(tmp_path / "t.csv")}
    code, out = run(tmp_path, "plan-viz", params)
    assert code == 0
    assert all(float(r["cross_label_mass"]) == 0.0 for r in read_csv(out / "plan_summary.csv"))


def test_solve_json(tmp_path):
    code, out = run(tmp_path, "solve", {"source": [[0.0, 0.0]], "target": [[3.0, 4.0]], "epsilon": 0.0, "tau": 2.0})
    assert code == 0
    res = json.loads((out / "result.json").read_text())
    assert res["cost"] == pytest.approx(4 * (1 - math.exp(-25 / 4)), abs=1e-9)


def test_paper_scale_flag_merges_sizes(tmp_path, monkeypatch):
    seen = {}

    def fake(params, seed, out):
        seen.update(params)

    monkeypatch.setitem(cli.RUNNERS, "flow", fake)
    code, _ = run(tmp_path, "flow", {"m": 8}, extra=["--paper-scale"])
    assert code == 0
    assert seen == {"m": 8, "n": 10000, "iterations": 5000}


@pytest.mark.parametrize("experiment,params", [
    ("solve", {"cost": [[1.0]], "tau": "lots"}),
    ("solve", {"cost": [[1.0]], "tau": -1}),
    ("flow", {"learning_rate": 0.1}),
    ("outlier", {"losses": ["wasserstein"]}),
    ("jumbot", {"m": 0}),
    ("solve", {"epsilon": 0.1}),
    ("plan-viz", {"source_csv": "only-one.csv"}),
])
def test_config_errors_exit_2(tmp_path, experiment, params, capsys):
    code, _ = run(tmp_path, experiment, params)
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_malformed_json_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_seed_range(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL["solve"]))
    assert cli.main(["solve", "--config", str(cfg), "--seed", str(2**64), "--out", str(tmp_path / "o")]) == 2


def test_unknown_experiment():
    with pytest.raises(SystemExit) as exc:
        cli.main(["histogram"])
    assert exc.value.code == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    params = {"n": 20, "iterations": 5, "m": 20, "lr": 1e200, "taus": [1.0], "loss": "uot"}
    code, _ = run(tmp_path, "flow", params)
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_schema_is_valid_draft7():
    schema = cli.load_schema()
    jsonschema.Draft7Validator.check_schema(schema)
    for name in cli.EXPERIMENTS:
        assert name in schema["definitions"]
    for name, params in SMALL.items():
        cli.validate(name, params)
