"""Command-line interface: artifacts, exit codes, config handling."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from metabalance.cli import main
from metabalance.model import write_id_csv

from conftest import make_id_dataset

AD_CSV = """study_id,tau_hat,sigma2_hat,n,b1
1,2.0,1.0,50,0.0
2,4.0,1.0,50,1.0
3,9.0,1.0,50,2.0
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(314159)
    data = make_id_dataset(rng, n=240, p=2, m=3)
    write_id_csv(data, root / "id.csv")
    (root / "ad.csv").write_text(AD_CSV)
    (root / "profile.json").write_text(json.dumps(
        {"means": [0.3, -0.1], "n_star": 150}))
    (root / "far.json").write_text(json.dumps({"means": [50.0, 50.0]}))
    (root / "profile_ad.json").write_text(json.dumps({"means": [0.25]}))
    return root


def _read_json(path):
    return json.loads(Path(path).read_text())


def test_fit_id_writes_expected_artifacts(workdir, tmp_path):
    out = tmp_path / "run"
    code = main(["fit-id", "--data", str(workdir / "id.csv"),
                 "--profile", str(workdir / "profile.json"),
                 "--out", str(out)])
    assert code == 0
    est = _read_json(out / "estimate.json")
    assert est["method_tag"] == "ID_BOUNDED"
    assert np.isfinite(est["tau_hat"])
    assert est["variance_heuristic"] > 0
    assert est["variance_plugin"] > 0
    assert est["ci_lower"] < est["tau_hat"] < est["ci_upper"]
    assert est["ci_scaling"] == "sqrt_n"
    with open(out / "weights.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 240
    assert set(rows[0]) == {"unit", "study", "group", "weight", "retained"}
    for name in ("weights.csv", "asmd.csv", "summary.json"):
        assert (out / "diagnostics" / name).exists()
    meta = _read_json(out / "run_metadata.json")
    assert meta["version"] and "created_at" in meta


def test_fit_id_reruns_are_byte_identical(workdir, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["fit-id", "--data", str(workdir / "id.csv"),
                     "--profile", str(workdir / "profile.json"),
                     "--out", str(out)]) == 0
        outs.append(out)
    for name in ("estimate.json", "weights.csv",
                 "diagnostics/summary.json", "diagnostics/asmd.csv"):
        assert (outs[0] / name).read_bytes() == \
            (outs[1] / name).read_bytes()


def test_infeasible_profile_exit_code_and_certificate(workdir, tmp_path):
    out = tmp_path / "bad"
    code = main(["fit-id", "--data", str(workdir / "id.csv"),
                 "--profile", str(workdir / "far.json"),
                 "--out", str(out)])
    assert code == 2
    err = _read_json(out / "error.json")
    assert err["error"] == "Infeasible"
    cert = _read_json(out / "certificate.json")
    assert "dual_ray" in cert and len(cert["dual_ray"]) >= 3


def test_missing_input_exit_code(tmp_path):
    out = tmp_path / "missing"
    code = main(["fit-id", "--data", str(tmp_path / "nope.csv"),
                 "--profile", str(tmp_path / "nope.json"),
                 "--out", str(out)])
    assert code == 1
    assert (out / "error.json").exists()


def test_config_file_fills_gaps_but_flags_win(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"level": 0.8,
                               "profile": str(workdir / "profile.json")}))
    out1 = tmp_path / "from_config"
    assert main(["fit-id", "--data", str(workdir / "id.csv"),
                 "--config", str(cfg), "--out", str(out1)]) == 0
    assert _read_json(out1 / "estimate.json")["ci_level"] == 0.8

    out2 = tmp_path / "flag_wins"
    assert main(["fit-id", "--data", str(workdir / "id.csv"),
                 "--config", str(cfg), "--level", "0.9",
                 "--out", str(out2)]) == 0
    assert _read_json(out2 / "estimate.json")["ci_level"] == 0.9


def test_absent_seed_is_printed_for_replay(workdir, tmp_path, capsys):
    out = tmp_path / "boot"
    assert main(["fit-id", "--data", str(workdir / "id.csv"),
                 "--profile", str(workdir / "profile.json"),
                 "--boot", "100", "--out", str(out)]) == 0
    assert "seed:" in capsys.readouterr().out
    est = _read_json(out / "estimate.json")
    lo, hi = est["extra"]["ci_boot"]
    assert lo < est["tau_hat"] < hi


def test_fit_ad_worked_instance(workdir, tmp_path):
    out = tmp_path / "ad"
    assert main(["fit-ad", "--data", str(workdir / "ad.csv"),
                 "--profile", str(workdir / "profile_ad.json"),
                 "--out", str(out)]) == 0
    est = _read_json(out / "estimate.json")
    assert est["tau_hat"] == pytest.approx(2.5, abs=1e-8)
    with open(out / "weights.csv") as fh:
        rows = list(csv.DictReader(fh))
    weights = [float(r["weight"]) for r in rows]
    assert weights == pytest.approx([0.75, 0.25, 0.0], abs=1e-8)
    assert [r["retained"] for r in rows] == ["1", "1", "0"]


def test_fit_ad_infeasible(workdir, tmp_path):
    out = tmp_path / "ad_bad"
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"means": [7.0]}))
    assert main(["fit-ad", "--data", str(workdir / "ad.csv"),
                 "--profile", str(prof), "--out", str(out)]) == 2
    assert (out / "certificate.json").exists()


def test_fit_id_ols_layout(workdir, tmp_path):
    out = tmp_path / "ols"
    assert main(["fit-id", "--data", str(workdir / "id.csv"), "--ols",
                 "--f-set", "1", "--out", str(out)]) == 0
    est = _read_json(out / "estimate.json")
    assert est["method_tag"] == "ONE_STAGE_OLS"
    assert est["extra"]["f_set"] == [1]
    with open(out / "weights.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == ["unit", "study", "z", "w_treated_fit",
                      "w_control_fit"]
    summary = _read_json(out / "diagnostics" / "summary.json")
    assert "negative_weights" in summary


def test_fit_mixed_runs(workdir, tmp_path):
    ad2 = tmp_path / "ad2.csv"
    ad2.write_text("study_id,tau_hat,sigma2_hat,n,b1,b2\n"
                   "7,1.0,1.0,40,0.3,0.3\n"
                   "8,3.0,1.0,40,-0.3,-0.3\n")
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"means": [0.0, 0.0]}))
    out = tmp_path / "mixed"
    assert main(["fit-mixed", "--data-id", str(workdir / "id.csv"),
                 "--data-ad", str(ad2), "--profile", str(prof),
                 "--out", str(out)]) == 0
    est = _read_json(out / "estimate.json")
    assert est["method_tag"] == "TWO_STAGE"
    with open(out / "weights.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5   # 3 individual-level studies + 2 aggregate


def test_diagnose_writes_bundle_and_svg(workdir, tmp_path, capsys):
    out = tmp_path / "diag"
    assert main(["diagnose", "--data", str(workdir / "id.csv"),
                 "--profile", str(workdir / "profile.json"),
                 "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "ess" in printed and "max_asmd" in printed
    svg = (out / "diagnostics" / "weights_scatter.svg").read_text()
    assert svg.startswith("<svg") and "circle" in svg
    assert (out / "diagnostics" / "asmd.csv").exists()


def test_simulate_small_run_is_deterministic(tmp_path):
    args = ["simulate", "--design", "full", "--n", "250",
            "--total", "2500", "--reps", "3", "--estimators", "bounded",
            "--seed", "4", "--threads", "1"]
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert (out1 / "metrics.csv").read_bytes() == \
        (out2 / "metrics.csv").read_bytes()
    metrics = _read_json(out1 / "metrics.json")
    assert metrics["seed"] == 4
    assert metrics["per_estimator"]["bounded"]["n_reps"] == 3
    assert np.isfinite(metrics["true_tau"])
