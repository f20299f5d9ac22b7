"""Point estimators.

Personalized weighting estimators over individual-level data (bounded
and unbounded), the pooled-regression one-stage estimator recovered
through implied weights, the two-stage pipeline combining per-study
estimates with study-level balancing, the classical inverse-variance
two-stage estimator, and the outcome-model / weighting / doubly-robust
comparison estimators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import inference
from .basis import (BasisMatrix, BasisSpec, augment_within_study,
                    basis_target_means, evaluate_basis, scale_profile)
from .errors import (DimensionMismatch, EmptyStudy, Infeasible,
                     MissingOutcome, NonConvergence, RankDeficient)
from .model import (AdDataset, EstimateReport, IdDataset, TargetProfile,
                    target_profile_from_means)
from .solver import (BalanceProblem, WeightSolution, ols_implied_weights,
                     solve_balancing_weights)


@dataclass(frozen=True)
class StudyEstimate:
    study_id: int
    tau_hat: float
    sigma2_hat: float          # variance of tau_hat
    basis_means: np.ndarray    # raw-scale, without the leading constant
    n_i: int
    source_tag: str            # ID_DERIVED | AD_SUPPLIED

    def __post_init__(self):
        self.basis_means.setflags(write=False)


@dataclass(frozen=True)
class StudyLevelEstimates:
    rows: tuple

    @property
    def m(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class TwoStageInput:
    id_studies: tuple          # per-study IdDataset slices
    ad_rows: tuple             # AdStudyRow
    profile: TargetProfile
    spec: BasisSpec

    def __post_init__(self):
        if not self.id_studies and not self.ad_rows:
            raise EmptyStudy("no studies supplied")


def _require_outcomes(data: IdDataset):
    if data.y is None or np.isnan(data.y).any():
        raise MissingOutcome("estimation requires complete outcomes")


def _solve_group(bmat: BasisMatrix, profile: TargetProfile,
                 data: IdDataset, z: int, bounded: bool,
                 dispersion: str) -> WeightSolution:
    mask = data.z == z
    if not mask.any():
        raise EmptyStudy(f"treatment group z={z} is empty")
    prob = BalanceProblem(
        b=bmat.values[mask], b_star=profile.basis_targets,
        delta=profile.tolerances, dispersion=dispersion, nonneg=bounded)
    try:
        sol = solve_balancing_weights(prob)
    except Infeasible as err:
        raise Infeasible(f"group z={z}: {err}",
                         certificate=err.certificate) from err
    sol.extra["group"] = z
    sol.extra["mask"] = mask
    return sol


def estimate_id(data: IdDataset, spec: BasisSpec, profile: TargetProfile,
                bounded: bool = True, dispersion: str = "SQUARED_L2"):
    """Weighting estimator over individual-level data.

    Solves the balancing program separately for each treatment group
    against the same target profile and contrasts the weighted outcome
    means. Returns (EstimateReport, treated solution, control solution).
    """
    _require_outcomes(data)
    bmat = evaluate_basis(data, spec)
    prof = scale_profile(profile, bmat)
    bmat, prof = augment_within_study(bmat, data, prof)

    sol1 = _solve_group(bmat, prof, data, 1, bounded, dispersion)
    sol0 = _solve_group(bmat, prof, data, 0, bounded, dispersion)
    tau = float(sol1.weights @ data.y[data.z == 1]
                - sol0.weights @ data.y[data.z == 0])
    report = EstimateReport(
        tau_hat=tau,
        method_tag="ID_BOUNDED" if bounded else "ID_UNBOUNDED",
        extra={"retained_treated": int(len(sol1.retained)),
               "retained_control": int(len(sol0.retained)),
               "dispersion": dispersion},
    )
    return report, sol1, sol0


def estimate_one_stage_ols(data: IdDataset, f_set: Sequence = (),
                           c_set: Optional[Sequence] = None):
    """Pooled-regression estimator via implied weights.

    `f_set` lists covariates with per-study coefficient blocks, `c_set`
    those with coefficients shared across studies (default: all not in
    `f_set`). The weighted contrast equals the treatment coefficient of
    the corresponding pooled regression.
    """
    _require_outcomes(data)
    f_set = sorted(set(f_set))
    if c_set is None:
        c_set = [l for l in range(1, data.p + 1) if l not in f_set]
    sol1 = ols_implied_weights(data, f_set, c_set, 1)
    sol0 = ols_implied_weights(data, f_set, c_set, 0)
    tau = float(sol1.weights @ data.y - sol0.weights @ data.y)
    report = EstimateReport(
        tau_hat=tau, method_tag="ONE_STAGE_OLS",
        extra={"f_set": list(f_set), "c_set": list(c_set)})
    return report, sol1, sol0


def one_stage_design(data: IdDataset, f_set: Sequence, c_set: Sequence,
                     include_treatment: bool = True) -> np.ndarray:
    """Design matrix of the pooled common-intercept regression: constant,
    optional treatment column, then common and per-study covariate main
    effects and treatment interactions."""
    cols = [np.ones(data.n)]
    if include_treatment:
        cols.append(data.z.astype(float))
    for l in sorted(c_set):
        cols.append(data.x[:, l - 1])
        cols.append(data.x[:, l - 1] * data.z)
    for i in range(1, data.m + 1):
        ind = (data.study == i).astype(float)
        for l in sorted(f_set):
            cols.append(ind * data.x[:, l - 1])
            cols.append(ind * data.x[:, l - 1] * data.z)
    return np.column_stack(cols)


def _study_constant_columns(x: np.ndarray, spec: BasisSpec):
    """1-based positions of non-constant basis terms that actually vary
    within this study (term 1 always kept)."""
    from .basis import _raw_columns
    cols = _raw_columns(x, spec)
    keep = [1]
    for k in range(2, spec.k + 1):
        if np.ptp(cols[:, k - 1]) > 0:
            keep.append(k)
    return keep


def _stage_one(study_data: IdDataset, spec: BasisSpec,
               profile: TargetProfile, dispersion: str) -> StudyEstimate:
    _require_outcomes(study_data)
    keep = _study_constant_columns(study_data.x, spec)
    bmat = evaluate_basis(study_data, spec)
    prof = scale_profile(profile, bmat)
    if len(keep) < spec.k:
        idx = [k - 1 for k in keep]
        bmat = BasisMatrix(values=bmat.values[:, idx].copy(), spec=spec,
                           scaling=tuple(bmat.scaling[i] for i in idx))
        prof = TargetProfile(
            basis_targets=prof.basis_targets[idx].copy(),
            tolerances=prof.tolerances[idx].copy(),
            n_star=prof.n_star, alpha=prof.alpha)
    sol1 = _solve_group(bmat, prof, study_data, 1, True, dispersion)
    sol0 = _solve_group(bmat, prof, study_data, 0, True, dispersion)
    y = study_data.y
    tau = float(sol1.weights @ y[study_data.z == 1]
                - sol0.weights @ y[study_data.z == 0])
    var = inference.heuristic_variance_id(
        study_data, sol1, sol0, tau).v_heuristic / study_data.n
    sid = int(study_data.study[0])
    return StudyEstimate(
        study_id=sid, tau_hat=tau, sigma2_hat=max(var, 1e-12),
        basis_means=basis_target_means(study_data.x, spec),
        n_i=study_data.n, source_tag="ID_DERIVED")


def estimate_two_stage(inp: TwoStageInput, bounded: bool = True,
                       dispersion: str = "SQUARED_L2",
                       scale: str = "sigma2"):
    """Two-stage pipeline: per-study solves on individual-level studies,
    then study-level balancing toward the target profile over the pooled
    study summaries (including any aggregate-only rows)."""
    rows = []
    for d in inp.id_studies:
        try:
            rows.append(_stage_one(d, inp.spec, inp.profile, dispersion))
        except Exception as err:
            sid = int(d.study[0]) if d.n else -1
            raise type(err)(f"study {sid}: {err}") from err
    for r in inp.ad_rows:
        rows.append(StudyEstimate(
            study_id=r.study_id, tau_hat=r.tau_hat,
            sigma2_hat=r.sigma2_hat, basis_means=r.basis_means.copy(),
            n_i=r.n_i, source_tag="AD_SUPPLIED"))
    estimates = StudyLevelEstimates(rows=tuple(rows))
    report, sol = estimate_ad(estimates, inp.profile, bounded=bounded,
                              dispersion=dispersion, scale=scale)
    report.method_tag = "TWO_STAGE"
    return report, estimates, sol


def _as_study_rows(rows) -> StudyLevelEstimates:
    if isinstance(rows, StudyLevelEstimates):
        return rows
    if isinstance(rows, AdDataset):
        return StudyLevelEstimates(rows=tuple(
            StudyEstimate(study_id=r.study_id, tau_hat=r.tau_hat,
                          sigma2_hat=r.sigma2_hat,
                          basis_means=r.basis_means.copy(), n_i=r.n_i,
                          source_tag="AD_SUPPLIED")
            for r in rows.rows))
    raise TypeError("expected StudyLevelEstimates or AdDataset")


def estimate_ad(rows, profile: TargetProfile, bounded: bool = True,
                dispersion: str = "SQUARED_L2", scale: str = "sigma2"):
    """Study-level weighting estimator over aggregate summaries.

    Balances the per-study basis means toward the target profile with
    dispersion scaled by c_i (study variance by default, 1/n_i when
    scale="inv_n") and contrasts nothing: the estimate is the weighted
    combination of the study effect estimates. Infeasibility is a
    first-class outcome carrying the violated-constraint certificate.
    """
    est = _as_study_rows(rows)
    bmeans = np.vstack([r.basis_means for r in est.rows])
    if bmeans.shape[1] != profile.k - 1:
        raise DimensionMismatch(
            f"study rows carry {bmeans.shape[1]} basis means, profile "
            f"expects {profile.k - 1}")
    b = np.column_stack([np.ones(est.m), bmeans])
    c = np.array([r.sigma2_hat if scale == "sigma2" else 1.0 / r.n_i
                  for r in est.rows])
    prob = BalanceProblem(b=b, b_star=profile.basis_targets,
                          delta=profile.tolerances, dispersion=dispersion,
                          nonneg=bounded, scale=c)
    sol = solve_balancing_weights(prob)
    tau = float(sol.weights @ np.array([r.tau_hat for r in est.rows]))
    report = EstimateReport(
        tau_hat=tau,
        method_tag="AD_BOUNDED" if bounded else "AD_UNBOUNDED",
        extra={"scale": scale, "m": est.m,
               "retained_studies": int(len(sol.retained))})
    return report, sol


def estimate_classical_two_stage(rows, tau2: Optional[float] = None):
    """Inverse-variance random-effects pooling.

    Between-study variance defaults to the moment estimator (truncated
    at zero); weights are 1 / (sigma2_i + tau2).
    """
    est = _as_study_rows(rows)
    if est.m < 2:
        raise EmptyStudy("pooling needs at least two studies")
    tau_i = np.array([r.tau_hat for r in est.rows])
    s2 = np.array([r.sigma2_hat for r in est.rows])
    if tau2 is None:
        v = 1.0 / s2
        fe = float(v @ tau_i / v.sum())
        q = float(v @ (tau_i - fe) ** 2)
        denom = v.sum() - float(v @ v) / v.sum()
        tau2 = max(0.0, (q - (est.m - 1)) / denom) if denom > 0 else 0.0
    c = s2 + tau2
    w = (1.0 / c) / np.sum(1.0 / c)
    tau = float(w @ tau_i)
    var = 1.0 / np.sum(1.0 / c)
    return EstimateReport(
        tau_hat=tau, method_tag="CLASSICAL_TWO_STAGE",
        variance_heuristic=var,
        ci_lower=tau - 1.959963984540054 * np.sqrt(var),
        ci_upper=tau + 1.959963984540054 * np.sqrt(var),
        ci_level=0.95, ci_scaling="var_of_tau_hat",
        extra={"tau2": float(tau2), "weights": w.tolist()})


# ---------------------------------------------------------------------------
# Comparison estimators
# ---------------------------------------------------------------------------

def _lstsq_fit(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        raise RankDeficient(
            f"design rank {rank} < {x.shape[1]} columns")
    return coef


def g_formula(data: IdDataset, target_units: np.ndarray):
    """Outcome-model estimator: per-group linear fits on the study
    sample, averaged over the target covariate rows."""
    _require_outcomes(data)
    target_units = np.atleast_2d(np.asarray(target_units, dtype=float))
    preds = {}
    for z in (0, 1):
        mask = data.z == z
        design = np.column_stack([np.ones(int(mask.sum())), data.x[mask]])
        coef = _lstsq_fit(design, data.y[mask])
        t_design = np.column_stack([np.ones(len(target_units)),
                                    target_units])
        preds[z] = t_design @ coef
    tau = float(np.mean(preds[1] - preds[0]))
    return EstimateReport(tau_hat=tau, method_tag="G_FORMULA")


def logistic_irls(x: np.ndarray, y: np.ndarray, max_iter: int = 100,
                  tol: float = 1e-10) -> np.ndarray:
    """Logistic regression by iteratively reweighted least squares."""
    beta = np.zeros(x.shape[1])
    for _ in range(max_iter):
        eta = np.clip(x @ beta, -30, 30)
        p = 1.0 / (1.0 + np.exp(-eta))
        wt = np.maximum(p * (1 - p), 1e-10)
        # working response solve: beta_new from weighted least squares
        xtw = x.T * wt
        try:
            delta = np.linalg.solve(xtw @ x, x.T @ (y - p))
        except np.linalg.LinAlgError:
            raise NonConvergence("singular information matrix in "
                                 "logistic fit")
        beta_new = beta + delta
        if np.max(np.abs(delta)) < tol:
            return beta_new
        beta = beta_new
    if np.max(np.abs(delta)) < 1e-6:
        return beta
    raise NonConvergence("logistic fit did not converge "
                         "(possible separation)")


def _ipw_weights(data: IdDataset, target_units: np.ndarray):
    """Per-study-unit weights from the selection odds times the inverse
    propensity, for transporting each arm to the target sample."""
    target_units = np.atleast_2d(np.asarray(target_units, dtype=float))
    xs = np.vstack([data.x, target_units])
    s = np.concatenate([np.ones(data.n), np.zeros(len(target_units))])
    xd = np.column_stack([np.ones(len(xs)), xs])
    beta_s = logistic_irls(xd, s)
    p_sel = 1.0 / (1.0 + np.exp(-np.clip(
        np.column_stack([np.ones(data.n), data.x]) @ beta_s, -30, 30)))

    xp = np.column_stack([np.ones(data.n), data.x])
    beta_e = logistic_irls(xp, data.z.astype(float))
    e = 1.0 / (1.0 + np.exp(-np.clip(xp @ beta_e, -30, 30)))

    odds = (1.0 - p_sel) / p_sel
    u = np.where(data.z == 1, odds / e, odds / (1.0 - e))
    return u


def ipw_estimator(data: IdDataset, target_units: np.ndarray):
    """Weighting estimator: selection-odds times inverse-propensity
    weights, normalized within each arm."""
    _require_outcomes(data)
    u = _ipw_weights(data, target_units)
    t1 = data.z == 1
    t0 = ~t1
    tau = float(u[t1] @ data.y[t1] / u[t1].sum()
                - u[t0] @ data.y[t0] / u[t0].sum())
    return EstimateReport(tau_hat=tau, method_tag="IPW")


def augmented_estimator(data: IdDataset, target_units: np.ndarray):
    """Doubly-robust combination: outcome-model prediction over the
    target plus weighted residual corrections."""
    _require_outcomes(data)
    target_units = np.atleast_2d(np.asarray(target_units, dtype=float))
    coefs = {}
    for z in (0, 1):
        mask = data.z == z
        design = np.column_stack([np.ones(int(mask.sum())), data.x[mask]])
        coefs[z] = _lstsq_fit(design, data.y[mask])
    t_design = np.column_stack([np.ones(len(target_units)), target_units])
    g_term = float(np.mean(t_design @ coefs[1] - t_design @ coefs[0]))

    u = _ipw_weights(data, target_units)
    xd = np.column_stack([np.ones(data.n), data.x])
    corr = 0.0
    for z, sgn in ((1, 1.0), (0, -1.0)):
        mask = data.z == z
        resid = data.y[mask] - xd[mask] @ coefs[z]
        corr += sgn * float(u[mask] @ resid / u[mask].sum())
    return EstimateReport(tau_hat=g_term + corr, method_tag="AUGMENTED")
