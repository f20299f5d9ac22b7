"""End-to-end acceptance checks.

One test per headline guarantee, each printing a single PASS line with
the measured quantities. The simulation-based checks share
module-scoped replication runs; tolerances are stated inline next to
each assertion.
"""

import json
import time

import numpy as np
import pytest

from metabalance.basis import evaluate_basis, identity_spec, scale_profile
from metabalance.cli import main
from metabalance.diagnostics import support_detection_summary
from metabalance.estimators import estimate_id, estimate_one_stage_ols
from metabalance.inference import heuristic_variance_id
from metabalance.model import target_profile_from_means, write_id_csv
from metabalance.simlab import (SimDesign, calibrate_intercepts,
                                generate_dataset, run_replications)
from metabalance.solver import (BalanceProblem, dual_objective,
                                solve_balancing_weights, solve_qp_oracle)

from conftest import make_id_dataset


def _ok(name, detail):
    print(f"[PASS] {name}: {detail}")


# ---------------------------------------------------------------------------
# Solver-level criteria
# ---------------------------------------------------------------------------

def test_solver_matches_enumeration_oracle_on_200_problems():
    rng = np.random.default_rng(1001)
    start = time.monotonic()
    worst = 0.0
    solved = 0
    while solved < 200:
        n = int(rng.integers(3, 13))
        k = int(rng.integers(1, 4))
        b = np.column_stack([np.ones(n), rng.standard_normal((n, k))])
        alpha = rng.dirichlet(np.ones(n))
        delta_val = 0.2 if solved % 2 else 0.0
        prob = BalanceProblem(
            b=b, b_star=b.T @ alpha,
            delta=np.concatenate([[0.0], np.full(k, delta_val)]),
            nonneg=bool(rng.integers(0, 2)))
        got = solve_balancing_weights(prob)
        want = solve_qp_oracle(prob)
        worst = max(worst, float(np.max(np.abs(got.weights
                                               - want.weights))))
        solved += 1
    elapsed = time.monotonic() - start
    assert worst <= 1e-7, f"worst |w_solver - w_oracle| = {worst:.3e}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    _ok("dual solver vs enumeration oracle",
        f"200 problems, worst gap {worst:.2e}, {elapsed:.2f}s")


def test_implied_weights_reproduce_pooled_regression():
    rng = np.random.default_rng(1002)
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(40, 201))
        p = int(rng.integers(1, 5))
        m = int(rng.integers(1, 4))
        data = make_id_dataset(rng, n=n, p=p, m=m)
        for f_set in ((), tuple(range(1, p + 1))):
            c_set = tuple(l for l in range(1, p + 1) if l not in f_set)
            rep, _, _ = estimate_one_stage_ols(data, f_set=f_set,
                                               c_set=c_set)
            from metabalance.estimators import one_stage_design
            design = one_stage_design(data, f_set, c_set)
            coef, _, _, _ = np.linalg.lstsq(design, data.y, rcond=None)
            worst = max(worst, abs(rep.tau_hat - coef[1]))
    assert worst <= 1e-8, f"worst |tau_weights - tau_regression| = {worst}"
    _ok("implied weights equal pooled regression",
        f"50 datasets x 2 partitions, worst gap {worst:.2e}")


def test_bounded_solution_is_unbounded_solution_on_retained_set():
    rng = np.random.default_rng(1003)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(6, 40))
        k = int(rng.integers(1, 4))
        b = np.column_stack([np.ones(n), rng.standard_normal((n, k))])
        alpha = rng.dirichlet(np.full(n, 0.3))
        prob = BalanceProblem(b=b, b_star=b.T @ alpha,
                              delta=np.zeros(k + 1), nonneg=True)
        bounded = solve_balancing_weights(prob)
        ret = bounded.retained
        off = np.setdiff1d(np.arange(n), ret)
        assert np.all(bounded.weights[off] == 0.0), \
            "off-retained weights must be exactly zero"
        sub = BalanceProblem(b=b[ret], b_star=prob.b_star,
                             delta=prob.delta, nonneg=False)
        relaxed = solve_balancing_weights(sub)
        worst = max(worst, float(np.max(np.abs(
            relaxed.weights - bounded.weights[ret]))))
    assert worst <= 1e-8, f"worst on-retained gap = {worst}"
    _ok("restriction-relaxation identity",
        f"100 solves, worst on-retained gap {worst:.2e}")


def test_heuristic_variance_equals_regression_variance():
    rng = np.random.default_rng(1004)
    from metabalance.estimators import one_stage_design
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(50, 180))
        p = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        data = make_id_dataset(rng, n=n, p=p, m=m)
        f_set = tuple(l for l in range(1, p + 1)
                      if rng.integers(0, 2))
        c_set = tuple(l for l in range(1, p + 1) if l not in f_set)
        rep, sol1, sol0 = estimate_one_stage_ols(data, f_set=f_set,
                                                 c_set=c_set)
        vr = heuristic_variance_id(data, sol1, sol0, rep.tau_hat,
                                   f_set=f_set, c_set=c_set)
        design = one_stage_design(data, f_set, c_set)
        coef, _, _, _ = np.linalg.lstsq(design, data.y, rcond=None)
        resid = data.y - design @ coef
        s2 = float(resid @ resid) / (data.n
                                     - np.linalg.matrix_rank(design))
        cov = s2 * np.linalg.pinv(design.T @ design)
        worst = max(worst, abs(vr.v_heuristic / data.n - cov[1, 1]))
    assert worst <= 1e-8, f"worst variance gap = {worst}"
    _ok("heuristic variance equals regression variance",
        f"50 datasets, worst gap {worst:.2e}")


def test_dual_gradient_matches_central_differences():
    rng = np.random.default_rng(1005)
    h = 1e-5
    worst = 0.0
    for dispersion in ("SQUARED_L2", "NEG_ENTROPY"):
        for _ in range(20):
            n = int(rng.integers(4, 15))
            k = int(rng.integers(1, 5))
            b = np.column_stack([np.ones(n),
                                 rng.standard_normal((n, k - 1))]) \
                if k > 1 else np.ones((n, 1))
            prob = BalanceProblem(
                b=b, b_star=np.concatenate([[1.0],
                                            0.2 * rng.standard_normal(
                                                k - 1)]),
                delta=np.zeros(k), dispersion=dispersion,
                nonneg=bool(rng.integers(0, 2)))
            # sample a point away from the kinks of the truncated
            # transform so the dual is twice differentiable there
            for _ in range(100):
                lam = 0.8 * rng.standard_normal(k)
                v = prob.b @ lam / prob.scale
                if np.min(np.abs(v)) > 1e-3:
                    break
            _, grad = dual_objective(lam, prob)
            for j in range(k):
                e = np.zeros(k)
                e[j] = h
                up, _ = dual_objective(lam + e, prob)
                dn, _ = dual_objective(lam - e, prob)
                num = (up - dn) / (2 * h)
                worst = max(worst, abs(num - grad[j]))
    assert worst <= 1e-6, f"worst gradient gap = {worst}"
    _ok("dual gradient check", f"40 points, worst gap {worst:.2e}")


# ---------------------------------------------------------------------------
# Simulation criteria (shared heavy fixtures)
# ---------------------------------------------------------------------------

ESTIMATORS = ("bounded", "unbounded", "ipw", "aug")


@pytest.fixture(scope="module")
def partial_1000():
    design = calibrate_intercepts(SimDesign(overlap="PARTIAL",
                                            target_study_n=1000,
                                            total_n=10_000))
    return run_replications(design, estimator_names=ESTIMATORS, r=500,
                            master_seed=7)


@pytest.fixture(scope="module")
def full_1000():
    design = calibrate_intercepts(SimDesign(overlap="FULL",
                                            target_study_n=1000,
                                            total_n=10_000))
    return run_replications(design, estimator_names=("bounded",), r=1000,
                            master_seed=20260824)


@pytest.fixture(scope="module")
def partial_5000():
    design = calibrate_intercepts(SimDesign(overlap="PARTIAL",
                                            target_study_n=5000,
                                            total_n=50_000))
    return run_replications(design, estimator_names=("bounded",), r=200,
                            master_seed=7)


@pytest.fixture(scope="module")
def full_5000():
    design = calibrate_intercepts(SimDesign(overlap="FULL",
                                            target_study_n=5000,
                                            total_n=50_000))
    return run_replications(design, estimator_names=("bounded",), r=100,
                            master_seed=20260824)


def test_partial_overlap_estimator_contrast(partial_1000):
    start = time.monotonic()
    per = partial_1000.per_estimator
    b = per["bounded"]
    assert abs(b["bias"]) <= 0.02, f"bounded bias {b['bias']:.4f}"
    assert 0.12 <= b["rmse"] <= 0.20, f"bounded rmse {b['rmse']:.4f}"
    u = per["unbounded"]["bias"]
    assert -0.80 <= u <= -0.58, f"unbounded bias {u:.4f}"
    i = per["ipw"]["bias"]
    assert 2.9 <= i <= 4.3, f"ipw bias {i:.4f}"
    a = per["aug"]["bias"]
    assert 0.35 <= a <= 0.80, f"augmented bias {a:.4f}"
    assert time.monotonic() - start < 900
    _ok("partial-overlap contrast (n=1000, R=500)",
        f"bounded bias {b['bias']:.4f} rmse {b['rmse']:.4f}, "
        f"unbounded {u:.4f}, ipw {i:.4f}, aug {a:.4f}")


def test_full_overlap_coverage_and_bias(full_1000):
    b = full_1000.per_estimator["bounded"]
    assert abs(b["bias"]) <= 0.01, f"bias {b['bias']:.4f}"
    assert 0.93 <= b["coverage"] <= 0.97, f"coverage {b['coverage']:.3f}"
    _ok("full-overlap coverage (n=1000, R=1000)",
        f"bias {b['bias']:.4f}, coverage {b['coverage']:.3f}")


def test_out_of_support_units_are_discarded():
    # The bounded program run with a relaxed balance tolerance on the
    # covariate-mean rows places its positivity cutoff in the gap
    # between the in-support and out-of-support score regions; at the
    # exact-balance limit the cutoff instead sits strictly inside the
    # support and in-support recall stalls near one half, because the
    # data-generating tilt is not affine in the basis.
    design = calibrate_intercepts(SimDesign(overlap="PARTIAL",
                                            target_study_n=5000,
                                            total_n=10_000))
    spec = identity_spec(3, standardize=True)
    delta = 0.38
    tprs, tnrs = [], []
    for child in np.random.SeedSequence(20260824).spawn(20):
        draw = generate_dataset(design, child)
        data = draw.study_data
        profile = target_profile_from_means(draw.target_x.mean(axis=0))
        bmat = evaluate_basis(data, spec)
        prof = scale_profile(profile, bmat)
        tol = np.concatenate([[0.0], np.full(3, delta)])
        w_full = np.zeros(data.n)
        for z in (1, 0):
            mask = data.z == z
            sol = solve_balancing_weights(BalanceProblem(
                b=bmat.values[mask], b_star=prof.basis_targets,
                delta=tol, nonneg=True))
            w_full[mask] = sol.weights
        tpr, tnr = support_detection_summary(w_full, draw.truth_flags)
        tprs.append(tpr)
        tnrs.append(tnr)
    tpr, tnr = float(np.mean(tprs)), float(np.mean(tnrs))
    assert tpr >= 0.95, f"in-support retention {tpr:.4f}"
    assert tnr >= 0.90, f"out-of-support discard {tnr:.4f}"
    _ok("support detection (n=5000, 20 seeds)",
        f"in-support retained {tpr:.4f}, out-of-support dropped "
        f"{tnr:.4f}")


def test_bias_shrinks_with_sample_size(partial_1000, full_1000,
                                       partial_5000, full_5000):
    detail = []
    for label, small, large in (
            ("PARTIAL", partial_1000, partial_5000),
            ("FULL", full_1000, full_5000)):
        b_small = small.per_estimator["bounded"]
        b_large = large.per_estimator["bounded"]
        se = np.sqrt(b_small["sd"] ** 2 / b_small["n_reps"]
                     + b_large["sd"] ** 2 / b_large["n_reps"])
        assert abs(b_large["bias"]) <= abs(b_small["bias"]) + 2 * se, (
            f"{label}: |bias| grew from {b_small['bias']:.4f} (n=1000) "
            f"to {b_large['bias']:.4f} (n=5000), 2 MC SE = {2 * se:.4f}")
        detail.append(f"{label} {b_small['bias']:.4f} -> "
                      f"{b_large['bias']:.4f} (2se {2 * se:.4f})")
    _ok("bias trend n=1000 vs n=5000", "; ".join(detail))


# ---------------------------------------------------------------------------
# Determinism of the command-line workflows
# ---------------------------------------------------------------------------

def test_fixed_seed_runs_are_byte_identical(tmp_path):
    rng = np.random.default_rng(99)
    data = make_id_dataset(rng, n=150, p=2, m=2)
    write_id_csv(data, tmp_path / "id.csv")
    (tmp_path / "p.json").write_text(json.dumps(
        {"means": [0.1, -0.1], "n_star": 80}))

    fit_args = ["fit-id", "--data", str(tmp_path / "id.csv"),
                "--profile", str(tmp_path / "p.json"),
                "--boot", "100", "--seed", "5"]
    sim_args = ["simulate", "--design", "full", "--n", "300",
                "--total", "3000", "--reps", "4",
                "--estimators", "bounded", "--seed", "11",
                "--threads", "1"]
    pairs = []
    for tag, args, files in (
            ("fit", fit_args, ("estimate.json", "weights.csv",
                               "diagnostics/summary.json")),
            ("sim", sim_args, ("metrics.csv",))):
        outs = []
        for run in ("1", "2"):
            out = tmp_path / f"{tag}{run}"
            assert main(args + ["--out", str(out)]) == 0
            outs.append(out)
        for name in files:
            a = (outs[0] / name).read_bytes()
            b = (outs[1] / name).read_bytes()
            assert a == b, f"{tag}: {name} differs between reruns"
            pairs.append(f"{tag}/{name}")
    _ok("seeded determinism", f"byte-identical: {', '.join(pairs)}")
