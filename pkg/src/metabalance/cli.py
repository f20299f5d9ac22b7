"""Command-line entry point.

Subcommands cover fitting on individual-level data (fit-id), aggregate
summaries (fit-ad), mixed individual plus aggregate sources (fit-mixed),
outcome-free design diagnostics (diagnose), the simulation lab
(simulate), and the HTTP service (serve).

Every run writes machine-readable artifacts into --out: estimate.json
with stable key order, weights.csv, and a diagnostics/ folder where it
applies. Timestamps live in run_metadata.json only, so estimate.json is
byte-identical across reruns of the same config and seed. Failures
produce error.json; an infeasible balancing program exits with code 2
and drops the dual certificate next to it.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import build_basis_spec, evaluate_basis, identity_spec, \
    scale_profile
from .diagnostics import build_bundle, bundle_summary, \
    sign_reversal_report, write_asmd_csv, write_summary_json, \
    write_weight_scatter_svg, write_weights_csv
from .errors import Infeasible, MetabalanceError
from .estimators import TwoStageInput, estimate_id, \
    estimate_one_stage_ols, estimate_two_stage
from .inference import bootstrap_ci, heuristic_variance_ad, \
    heuristic_variance_id
from .workflow import fit_ad_workflow, fit_id_workflow
from .model import TargetProfile, read_ad_csv, read_id_csv, \
    target_profile_from_means

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------

def _load_profile(path) -> TargetProfile:
    text = Path(path).read_text()
    obj = json.loads(text)
    if "means" in obj:
        return target_profile_from_means(
            obj["means"], tolerances=obj.get("tolerances"),
            n_star=obj.get("n_star"), alpha=obj.get("alpha"))
    return TargetProfile.from_json(text)


def _load_basis(arg, p: int):
    if arg is None:
        return identity_spec(p, standardize=True)
    if os.path.exists(arg):
        cfg = json.loads(Path(arg).read_text())
    else:
        cfg = json.loads(arg)
    if isinstance(cfg, dict):
        return build_basis_spec(cfg.get("terms", []), p,
                                within=tuple(cfg.get("within", ())),
                                standardize=cfg.get("standardize", True))
    return build_basis_spec(cfg, p)


def _int_list(text):
    if not text:
        return ()
    return tuple(int(tok) for tok in str(text).split(",") if tok.strip())


def _json_dump(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_metadata(outdir: Path, args: dict, seed):
    _json_dump({
        "argv": sys.argv[1:],
        "created_at": datetime.datetime.now(
            datetime.timezone.utc).isoformat(),
        "seed": seed,
        "version": __version__,
        "resolved_options": {k: v for k, v in sorted(args.items())
                             if not k.startswith("_")},
    }, outdir / "run_metadata.json")


def _write_error(outdir: Path, err: Exception, certificate=None):
    obj = {"error": type(err).__name__, "message": str(err)}
    if certificate is not None:
        cert_path = outdir / "certificate.json"
        if not isinstance(certificate, dict):
            certificate = {"values": [float(v) for v in
                                      np.ravel(certificate)]}
        _json_dump(certificate, cert_path)
        obj["certificate"] = cert_path.name
    _json_dump(obj, outdir / "error.json")


def _write_unit_weights(path, data, sol1, sol0):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "study", "group", "weight", "retained"])
        for z, sol in ((1, sol1), (0, sol0)):
            idx = np.flatnonzero(data.z == z)
            for j, i in enumerate(idx):
                w = float(sol.weights[j])
                writer.writerow([int(i), int(data.study[i]), z, repr(w),
                                 int(w > 0)])


def _write_study_weights(path, rows, sol):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["study_id", "weight", "retained"])
        for r, w in zip(rows, sol.weights):
            writer.writerow([r.study_id, repr(float(w)), int(w > 0)])


def _resolve_seed(seed):
    """Absent seed: pick one at random and print it so the run can be
    replayed."""
    if seed is not None:
        return int(seed)
    fresh = int(np.random.SeedSequence().entropy % (2 ** 31))
    print(f"seed: {fresh}")
    return fresh


# ---------------------------------------------------------------------------
# Subcommand bodies (operate on merged option dicts)
# ---------------------------------------------------------------------------

def _attach_ci(report, vr, which: str):
    if vr.v_heuristic is not None:
        report.variance_heuristic = vr.v_heuristic
    if vr.v_plugin is not None:
        report.variance_plugin = vr.v_plugin
    if which in ("ci", "both"):
        report.ci_lower, report.ci_upper, report.ci_level = vr.ci
        report.ci_scaling = vr.flags.get("scaling")


def _cmd_fit_id(opt, outdir: Path):
    data = read_id_csv(opt["data"])
    if opt.get("ols"):
        return _cmd_fit_id_ols(opt, outdir, data)
    if not opt.get("profile"):
        raise MetabalanceError("fit-id needs --profile")
    profile = _load_profile(opt["profile"])
    spec = _load_basis(opt.get("basis"), data.p)
    report, sol1, sol0, bundle = fit_id_workflow(
        data, spec, profile, bounded=not opt.get("unbounded"),
        dispersion=opt.get("dispersion") or "SQUARED_L2",
        level=opt["level"])

    if opt.get("boot"):
        seed = _resolve_seed(opt.get("seed"))

        def refit(sample):
            rep, _, _ = estimate_id(sample, spec, profile,
                                    bounded=not opt.get("unbounded"))
            return rep.tau_hat
        lo, hi = bootstrap_ci(refit, data, b=int(opt["boot"]),
                              level=opt["level"], seed=seed)
        report.extra["ci_boot"] = [lo, hi]

    _emit_id_outputs(outdir, data, report, sol1, sol0, bundle,
                     svg=opt.get("svg"))
    return EXIT_OK


def _cmd_fit_id_ols(opt, outdir: Path, data):
    """Pooled-regression estimator: full-length implied weight vectors
    per fitted arm, so the artifacts differ slightly from the balancing
    layout (one row per unit with both arm weights)."""
    f_set = _int_list(opt.get("f_set"))
    report, sol1, sol0 = estimate_one_stage_ols(
        data, f_set=f_set,
        c_set=_int_list(opt["c_set"]) if opt.get("c_set") else None)
    vr = heuristic_variance_id(data, sol1, sol0, report.tau_hat,
                               f_set=f_set, level=opt["level"])
    _attach_ci(report, vr, "ci")
    report.diagnostics_ref = "diagnostics"
    (outdir / "diagnostics").mkdir(exist_ok=True)
    Path(outdir / "estimate.json").write_text(report.to_json() + "\n")
    with open(outdir / "weights.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "study", "z", "w_treated_fit",
                         "w_control_fit"])
        for i in range(data.n):
            writer.writerow([i, int(data.study[i]), int(data.z[i]),
                             repr(float(sol1.weights[i])),
                             repr(float(sol0.weights[i]))])
    _json_dump({
        "ess_treated": vr.ess_treated,
        "ess_control": vr.ess_control,
        "negative_weights": {
            "treated_fit": sign_reversal_report(sol1.weights, data.y),
            "control_fit": sign_reversal_report(sol0.weights, data.y)},
    }, outdir / "diagnostics" / "summary.json")
    return EXIT_OK


def _emit_id_outputs(outdir, data, report, sol1, sol0, bundle, svg=False):
    (outdir / "diagnostics").mkdir(exist_ok=True)
    Path(outdir / "estimate.json").write_text(report.to_json() + "\n")
    _write_unit_weights(outdir / "weights.csv", data, sol1, sol0)
    write_weights_csv(bundle, outdir / "diagnostics" / "weights.csv")
    write_asmd_csv(bundle, outdir / "diagnostics" / "asmd.csv")
    write_summary_json(bundle, outdir / "diagnostics" / "summary.json")
    if svg:
        write_weight_scatter_svg(
            data, bundle, outdir / "diagnostics" / "weights_scatter.svg")


def _cmd_fit_ad(opt, outdir: Path):
    scale = opt.get("scale") or "sigma2"
    data = read_ad_csv(opt["data"], scale=scale)
    profile = _load_profile(opt["profile"])
    report, sol = fit_ad_workflow(data, profile,
                                  bounded=not opt.get("unbounded"),
                                  scale=scale, level=opt["level"])
    Path(outdir / "estimate.json").write_text(report.to_json() + "\n")
    _write_study_weights(outdir / "weights.csv", data.rows, sol)
    return EXIT_OK


def _cmd_fit_mixed(opt, outdir: Path):
    id_data = read_id_csv(opt["data_id"]) if opt.get("data_id") else None
    ad_data = read_ad_csv(opt["data_ad"],
                          scale=opt.get("scale") or "sigma2") \
        if opt.get("data_ad") else None
    if id_data is None and ad_data is None:
        raise MetabalanceError("fit-mixed needs --data-id and/or --data-ad")
    profile = _load_profile(opt["profile"])
    p = id_data.p if id_data is not None else None
    spec = _load_basis(opt.get("basis"), p) if p is not None \
        else identity_spec(profile.k - 1, standardize=False)
    studies = ()
    if id_data is not None:
        studies = tuple(id_data.subset(id_data.study == i)
                        for i in range(1, id_data.m + 1))
    inp = TwoStageInput(id_studies=studies,
                        ad_rows=ad_data.rows if ad_data else (),
                        profile=profile, spec=spec)
    report, estimates, sol = estimate_two_stage(
        inp, bounded=not opt.get("unbounded"),
        scale=opt.get("scale") or "sigma2")
    try:
        vr = heuristic_variance_ad(estimates, sol, report.tau_hat,
                                   level=opt["level"])
        _attach_ci(report, vr, "ci")
    except MetabalanceError as err:
        report.extra["variance_note"] = str(err)
    Path(outdir / "estimate.json").write_text(report.to_json() + "\n")
    _write_study_weights(outdir / "weights.csv", estimates.rows, sol)
    return EXIT_OK


def _cmd_diagnose(opt, outdir: Path):
    data = read_id_csv(opt["data"])
    profile = _load_profile(opt["profile"])
    spec = _load_basis(opt.get("basis"), data.p)
    bmat = evaluate_basis(data, spec)
    prof = scale_profile(profile, bmat)
    from .solver import BalanceProblem, solve_balancing_weights
    sols = {}
    for z in (1, 0):
        mask = data.z == z
        sols[z] = solve_balancing_weights(BalanceProblem(
            b=bmat.values[mask], b_star=prof.basis_targets,
            delta=prof.tolerances,
            dispersion=opt.get("dispersion") or "SQUARED_L2",
            nonneg=not opt.get("unbounded")))
    bundle = build_bundle(data, sols[1], sols[0], bmat.values, prof)
    (outdir / "diagnostics").mkdir(exist_ok=True)
    write_weights_csv(bundle, outdir / "diagnostics" / "weights.csv")
    write_asmd_csv(bundle, outdir / "diagnostics" / "asmd.csv")
    write_summary_json(bundle, outdir / "diagnostics" / "summary.json")
    write_weight_scatter_svg(
        data, bundle, outdir / "diagnostics" / "weights_scatter.svg")
    print(json.dumps(bundle_summary(bundle), sort_keys=True))
    return EXIT_OK


def _cmd_simulate(opt, outdir: Path):
    from .simlab import SimDesign, calibrate_intercepts, run_replications
    seed = _resolve_seed(opt.get("seed"))
    design = SimDesign(
        overlap=str(opt.get("design") or "full").upper(),
        target_study_n=int(opt.get("n") or 1000),
        total_n=int(opt.get("total") or 10_000),
        balanced_trials=not opt.get("unbalanced_trials"),
        z_varies=not opt.get("fixed_z"),
        outside_frac=float(opt["outside_frac"])
        if opt.get("outside_frac") is not None else 0.18)
    design = calibrate_intercepts(design)
    names = tuple((opt.get("estimators") or "bounded,unbounded,ipw,aug")
                  .split(","))
    threads = int(opt.get("threads") or os.cpu_count() or 1)
    metrics = run_replications(design, estimator_names=names,
                               r=int(opt.get("reps") or 500),
                               master_seed=seed, threads=threads)
    with open(outdir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "bias", "sd", "rmse",
                         "ci_length", "coverage", "n_reps"])
        for name in names:
            e = metrics.per_estimator[name]
            writer.writerow([
                name, repr(e.get("bias")), repr(e.get("sd")),
                repr(e.get("rmse")),
                repr(e["ci_length"]) if "ci_length" in e else "",
                repr(e["coverage"]) if "coverage" in e else "",
                e.get("n_reps", 0)])
    _json_dump({"true_tau": metrics.true_tau,
                "replications": metrics.replications,
                "failures": metrics.failures,
                "per_estimator": metrics.per_estimator,
                "design": {"overlap": design.overlap,
                           "n": design.target_study_n,
                           "total_n": design.total_n,
                           "outside_frac": design.outside_frac,
                           "beta_0": design.beta_0,
                           "omega": design.omega},
                "seed": seed}, outdir / "metrics.json")
    print(f"wrote {outdir / 'metrics.csv'}")
    return EXIT_OK


def _cmd_serve(opt, outdir: Path):
    import uvicorn
    from .api import build_state, create_app
    state = build_state(
        data_path=opt["data"],
        kind="ad" if opt.get("ad") else "id",
        basis_arg=opt.get("basis"),
        scale=opt.get("scale") or "sigma2")
    app = create_app(state)
    uvicorn.run(app, host=opt.get("host") or "127.0.0.1",
                port=int(opt.get("port") or 8080), log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--config", default=None,
                     help="JSON file merged under explicit flags")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--level", type=float, default=None,
                     help="CI level (default 0.95)")
    sub.add_argument("--threads", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metabalance",
        description="Weighting-based evidence synthesis toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("fit-id", help="fit on individual-level data")
    s.add_argument("--data", required=True)
    s.add_argument("--profile", default=None,
                   help="target profile JSON (not used with --ols)")
    s.add_argument("--basis", default=None)
    s.add_argument("--bounded", action="store_true", default=None,
                   help="non-negative weights (default)")
    s.add_argument("--unbounded", action="store_true", default=None)
    s.add_argument("--dispersion", default=None,
                   choices=["SQUARED_L2", "NEG_ENTROPY"])
    s.add_argument("--ols", action="store_true", default=None,
                   help="pooled-regression implied weights instead of "
                        "balancing")
    s.add_argument("--f-set", dest="f_set", default=None,
                   help="comma list of per-study-coefficient covariates")
    s.add_argument("--c-set", dest="c_set", default=None)
    s.add_argument("--boot", type=int, default=None,
                   help="bootstrap replicates for a quantile CI")
    s.add_argument("--svg", action="store_true", default=None)
    _add_common(s)

    s = subs.add_parser("fit-ad", help="fit on aggregate study summaries")
    s.add_argument("--data", required=True)
    s.add_argument("--profile", required=True)
    s.add_argument("--scale", default=None, choices=["sigma2", "inv_n"])
    s.add_argument("--unbounded", action="store_true", default=None)
    _add_common(s)

    s = subs.add_parser("fit-mixed",
                        help="two-stage fit over individual-level and "
                             "aggregate sources")
    s.add_argument("--data-id", dest="data_id", default=None)
    s.add_argument("--data-ad", dest="data_ad", default=None)
    s.add_argument("--profile", required=True)
    s.add_argument("--basis", default=None)
    s.add_argument("--scale", default=None, choices=["sigma2", "inv_n"])
    s.add_argument("--unbounded", action="store_true", default=None)
    _add_common(s)

    s = subs.add_parser("diagnose",
                        help="outcome-free design diagnostics")
    s.add_argument("--data", required=True)
    s.add_argument("--profile", required=True)
    s.add_argument("--basis", default=None)
    s.add_argument("--dispersion", default=None,
                   choices=["SQUARED_L2", "NEG_ENTROPY"])
    s.add_argument("--unbounded", action="store_true", default=None)
    _add_common(s)

    s = subs.add_parser("simulate", help="replication study")
    s.add_argument("--design", default=None, choices=["full", "partial"])
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--total", type=int, default=None)
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--estimators", default=None,
                   help="comma list: bounded,unbounded,g,ipw,aug")
    s.add_argument("--outside-frac", dest="outside_frac", type=float,
                   default=None)
    s.add_argument("--unbalanced-trials", dest="unbalanced_trials",
                   action="store_true", default=None)
    s.add_argument("--fixed-z", dest="fixed_z", action="store_true",
                   default=None)
    _add_common(s)

    s = subs.add_parser("serve", help="HTTP service over one dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--ad", action="store_true", default=None)
    s.add_argument("--basis", default=None)
    s.add_argument("--scale", default=None, choices=["sigma2", "inv_n"])
    s.add_argument("--port", type=int, default=None)
    s.add_argument("--host", default=None)
    _add_common(s)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """Explicit flags win; config file fills gaps; defaults last."""
    opt = {k: v for k, v in vars(args).items() if v is not None}
    if opt.get("config"):
        cfg = json.loads(Path(opt["config"]).read_text())
        for k, v in cfg.items():
            opt.setdefault(k.replace("-", "_"), v)
    opt.setdefault("level", 0.95)
    return opt


_DISPATCH = {
    "fit-id": _cmd_fit_id,
    "fit-ad": _cmd_fit_ad,
    "fit-mixed": _cmd_fit_mixed,
    "diagnose": _cmd_diagnose,
    "simulate": _cmd_simulate,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opt = _merge_config(args)
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    outdir = Path(opt.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        code = _DISPATCH[args.command](opt, outdir)
    except Infeasible as err:
        print(f"infeasible: {err}", file=sys.stderr)
        _write_error(outdir, err, certificate=err.certificate)
        return EXIT_INFEASIBLE
    except (MetabalanceError, OSError, KeyError, ValueError,
            json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        _write_error(outdir, err)
        return EXIT_INPUT
    if args.command != "serve":
        _write_metadata(outdir, opt, opt.get("seed"))
    return code


if __name__ == "__main__":
    sys.exit(main())
