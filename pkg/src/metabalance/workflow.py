"""Shared fit pipelines used by both the CLI and the HTTP service.

Keeping these in one place guarantees the two front ends return the
same numbers for the same inputs: each front end only differs in how it
ships the report and diagnostics back to the caller.
"""

from __future__ import annotations

from .basis import evaluate_basis, scale_profile
from .diagnostics import build_bundle
from .estimators import estimate_ad, estimate_id
from .inference import heuristic_variance_ad, heuristic_variance_id, \
    plugin_variance_id
from .errors import MetabalanceError


def fit_id_workflow(data, spec, profile, bounded=True,
                    dispersion="SQUARED_L2", level=0.95):
    """Balancing fit on individual-level data with variances, CI, and
    the diagnostics bundle. Returns (report, sol1, sol0, bundle).

    The CI comes from the plug-in variance when the profile carries the
    target sample size, else from the heuristic variance.
    """
    report, sol1, sol0 = estimate_id(data, spec, profile,
                                     bounded=bounded,
                                     dispersion=dispersion)
    vr = heuristic_variance_id(data, sol1, sol0, report.tau_hat,
                               level=level)
    report.variance_heuristic = vr.v_heuristic
    use = vr
    if profile.n_star is not None:
        bmat = evaluate_basis(data, spec)
        pvr = plugin_variance_id(data, sol1, sol0, bmat,
                                 scale_profile(profile, bmat),
                                 report.tau_hat, level=level)
        report.variance_plugin = pvr.v_plugin
        use = pvr
    report.ci_lower, report.ci_upper, report.ci_level = use.ci
    report.ci_scaling = use.flags.get("scaling")

    bmat = evaluate_basis(data, spec)
    bundle = build_bundle(data, sol1, sol0, bmat.values,
                          scale_profile(profile, bmat))
    report.diagnostics_ref = "diagnostics"
    return report, sol1, sol0, bundle


def fit_ad_workflow(data, profile, bounded=True, scale="sigma2",
                    level=0.95):
    """Study-level balancing fit with the heuristic variance when the
    study count allows it. Returns (report, sol)."""
    report, sol = estimate_ad(data, profile, bounded=bounded, scale=scale)
    try:
        vr = heuristic_variance_ad(data, sol, report.tau_hat, level=level)
        report.variance_heuristic = vr.v_heuristic
        report.ci_lower, report.ci_upper, report.ci_level = vr.ci
        report.ci_scaling = vr.flags.get("scaling")
    except MetabalanceError as err:
        report.extra["variance_note"] = str(err)
    return report, sol
