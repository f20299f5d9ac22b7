"""Design-stage diagnostics: weight distributions, donor shares,
effective sample size, balance (ASMD), sign-reversal and support
detection summaries, and file writers for the diagnose workflow."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NotApplicable, ZeroWeights
from .model import IdDataset, TargetProfile


@dataclass
class DiagnosticsBundle:
    weight_records: list            # dicts: unit, study, group, weight, retained
    ess: dict                       # group -> effective sample size
    asmd: list                      # dicts: basis index, group, asmd
    negative_weight_count: int
    donor_shares: dict              # group -> {study: share}
    support_flags: Optional[np.ndarray] = None
    lambda_dual: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


def effective_sample_size(weights) -> float:
    """Kish effective sample size 1 / sum(w^2) for normalized weights."""
    w = np.asarray(weights, dtype=float)
    denom = float(np.sum(w * w))
    if denom == 0:
        raise ZeroWeights("all weights are zero")
    return 1.0 / denom


def asmd_report(basis_values: np.ndarray, weights_by_group: dict,
                profile: TargetProfile, pooled_sd=None,
                include_uniform: bool = True) -> list:
    """Per basis column and group: |weighted mean - target| / pooled sd.

    `weights_by_group` maps group label -> (row mask, weights over the
    masked rows). Zero-variance columns are skipped with a note row.
    """
    b = np.asarray(basis_values, dtype=float)
    k = b.shape[1]
    if pooled_sd is None:
        pooled_sd = b.std(axis=0, ddof=1)
    rows = []
    for k_idx in range(1, k):   # skip the constant column
        sd = float(pooled_sd[k_idx])
        target = float(profile.basis_targets[k_idx])
        if sd <= 0:
            rows.append({"basis": k_idx + 1, "group": "all",
                         "asmd": None, "note": "zero variance"})
            continue
        for label, (mask, w) in weights_by_group.items():
            wm = float(np.asarray(w) @ b[mask, k_idx])
            rows.append({"basis": k_idx + 1, "group": str(label),
                         "asmd": abs(wm - target) / sd, "note": ""})
        if include_uniform:
            raw = float(b[:, k_idx].mean())
            rows.append({"basis": k_idx + 1, "group": "uniform",
                         "asmd": abs(raw - target) / sd, "note": ""})
    return rows


def sign_reversal_report(weights, outcomes=None) -> dict:
    """Units with negative weight: for them, raising the outcome lowers
    the weighted group mean, reversing the usual monotonicity."""
    w = np.asarray(weights, dtype=float)
    neg = np.flatnonzero(w < 0)
    return {
        "count": int(len(neg)),
        "units": neg.tolist(),
        "negative_mass": float(-w[neg].sum()) if len(neg) else 0.0,
        "witness": [
            {"unit": int(i), "weight": float(w[i]),
             "outcome": None if outcomes is None else float(outcomes[i]),
             "d_tau_d_y": float(w[i])}
            for i in neg],
    }


def support_detection_summary(weights, truth_flags):
    """(tpr, tnr) against simulation-truth support membership: tpr is
    the share of in-support units retained, tnr the share of
    out-of-support units discarded. Requires non-negative weights."""
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise NotApplicable(
            "support detection needs non-negative weights; unbounded "
            "solutions have no discard set")
    flags = np.asarray(truth_flags, dtype=bool)
    retained = w > 0
    n_in = int(flags.sum())
    n_out = int((~flags).sum())
    tpr = float(retained[flags].sum() / n_in) if n_in else float("nan")
    tnr = float((~retained[~flags]).sum() / n_out) if n_out \
        else float("nan")
    return tpr, tnr


def build_bundle(data: IdDataset, sol1, sol0, basis_values,
                 profile: TargetProfile,
                 support_truth=None) -> DiagnosticsBundle:
    records = []
    w_full = np.zeros(data.n)
    for z, sol in ((1, sol1), (0, sol0)):
        mask = np.flatnonzero(data.z == z)
        w_full[mask] = sol.weights
        for j, idx in enumerate(mask):
            records.append({
                "unit": int(idx), "study": int(data.study[idx]),
                "group": z, "weight": float(sol.weights[j]),
                "retained": bool(sol.weights[j] > 0)})

    ess = {z: effective_sample_size(sol.weights)
           for z, sol in ((1, sol1), (0, sol0))}
    masks = {1: data.z == 1, 0: data.z == 0}
    asmd = asmd_report(basis_values, {z: (masks[z], sol.weights)
                                      for z, sol in ((1, sol1), (0, sol0))},
                       profile)
    shares = {}
    for z, sol in ((1, sol1), (0, sol0)):
        mask = masks[z]
        shares[z] = {int(i): float(sol.weights[data.study[mask] == i].sum())
                     for i in range(1, data.m + 1)}
    bundle = DiagnosticsBundle(
        weight_records=records,
        ess=ess,
        asmd=asmd,
        negative_weight_count=int((w_full < 0).sum()),
        donor_shares=shares,
        support_flags=None if support_truth is None
        else np.asarray(support_truth, dtype=bool),
        lambda_dual={1: sol1.lambda_dual.tolist(),
                     0: sol0.lambda_dual.tolist()},
    )
    return bundle


def bundle_summary(bundle: DiagnosticsBundle) -> dict:
    retained = {z: sum(1 for r in bundle.weight_records
                       if r["group"] == z and r["retained"])
                for z in (0, 1)}
    out = {
        "ess": {str(k): v for k, v in bundle.ess.items()},
        "retained": {str(k): v for k, v in retained.items()},
        "negative_weight_count": bundle.negative_weight_count,
        "donor_shares": {str(z): {str(i): s for i, s in d.items()}
                         for z, d in bundle.donor_shares.items()},
        "max_asmd": max((r["asmd"] for r in bundle.asmd
                         if r["asmd"] is not None), default=0.0),
        "lambda_dual": bundle.lambda_dual,
        "notes": bundle.notes,
    }
    return out


# ---------------------------------------------------------------------------
# File outputs
# ---------------------------------------------------------------------------

def write_weights_csv(bundle: DiagnosticsBundle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["unit", "study", "group", "weight", "retained"])
        writer.writeheader()
        for r in bundle.weight_records:
            writer.writerow(r)


def write_asmd_csv(bundle: DiagnosticsBundle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh,
                                fieldnames=["basis", "group", "asmd", "note"])
        writer.writeheader()
        for r in bundle.asmd:
            writer.writerow(r)


def write_summary_json(bundle: DiagnosticsBundle, path) -> None:
    with open(path, "w") as fh:
        json.dump(bundle_summary(bundle), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_weight_scatter_svg(data: IdDataset, bundle: DiagnosticsBundle,
                             path, x_axis: int = 1, y_axis: int = 2,
                             size: int = 480) -> None:
    """Scatter of units on two covariates, marker area proportional to
    weight, color by weight sign, retained units filled."""
    if data.p < 2:
        y_axis = x_axis
    xs = data.x[:, x_axis - 1]
    ys = data.x[:, y_axis - 1] if data.p >= 2 else np.zeros(data.n)
    pad = 40

    def scale(v, lo, hi):
        rng = hi - lo if hi > lo else 1.0
        return pad + (v - lo) / rng * (size - 2 * pad)

    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    w = np.zeros(data.n)
    for r in bundle.weight_records:
        w[r["unit"]] = r["weight"]
    wmax = max(float(np.abs(w).max()), 1e-12)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for i in range(data.n):
        cx = scale(xs[i], xlo, xhi)
        cy = size - scale(ys[i], ylo, yhi)
        radius = 2.0 + 10.0 * np.sqrt(abs(w[i]) / wmax)
        color = "#d62728" if w[i] < 0 else "#1f77b4"
        fill = color if w[i] != 0 else "none"
        parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius:.2f}" '
            f'fill="{fill}" fill-opacity="0.5" stroke="{color}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
