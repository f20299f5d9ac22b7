"""Monte Carlo lab: data generators for the fully and partially
overlapping designs, intercept calibration, a replication harness, and
an independent brute-force truth oracle.

Covariates are trivariate normal with unit variances and 0.5 pairwise
correlation. Study selection is logistic-linear in X (truncated in the
partial design: everything outside the target support region V is
forced into the study sample); selected units are allocated to three
trials by a multinomial logit, treatment is Bernoulli per trial, and
potential outcomes are linear in X with slopes of opposite sign per
arm. In the partial design, outcomes outside V follow a different model
chosen to be continuous on the boundary of V.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .basis import identity_spec, scale_profile, evaluate_basis
from .errors import CalibrationMissing, RootFindFailure
from .estimators import augmented_estimator, estimate_id, g_formula, \
    ipw_estimator
from .inference import plugin_variance_id
from .model import IdDataset, target_profile_from_means

LN2 = math.log(2.0)
CALIBRATION_SEED = 987001
CALIBRATION_DRAWS = 10 ** 6

# covariance: unit variances, 0.5 equicorrelation, fixed Cholesky factor
_COV = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
_CHOL = np.linalg.cholesky(_COV)


@dataclass(frozen=True)
class SimDesign:
    total_n: int = 10_000
    target_study_n: int = 1_000          # expected study-sample size n
    overlap: str = "FULL"                # or PARTIAL
    balanced_trials: bool = True
    z_varies: bool = True
    outside_frac: float = 0.18           # PARTIAL: E[share of draws outside V]
    beta: tuple = (LN2, LN2, LN2)
    zeta: tuple = (math.log(1.5),) * 3
    zeta_tilde: tuple = (math.log(0.75),) * 3
    theta_00: float = 1.5
    theta_10: float = 0.5
    theta_0: tuple = (1.0, 1.0, 1.0)
    theta_1: tuple = (-1.0, -1.0, -1.0)
    # calibrated quantities (None until calibrate_intercepts)
    beta_0: Optional[float] = None
    omega: Optional[float] = None
    zeta_0: Optional[float] = None
    zeta_tilde_0: Optional[float] = None

    @property
    def calibrated(self) -> bool:
        needed = [self.beta_0, self.zeta_0, self.zeta_tilde_0]
        if self.overlap == "PARTIAL":
            needed.append(self.omega)
        return all(v is not None for v in needed)

    def trial_shares(self) -> tuple:
        if self.balanced_trials:
            return (1 / 3, 1 / 3, 1 / 3)
        return (4 / 7, 2 / 7, 1 / 7)

    def z_probs(self) -> tuple:
        return (0.5, 1 / 3, 2 / 3) if self.z_varies else (0.5, 0.5, 0.5)


def _expit(v):
    return 1.0 / (1.0 + np.exp(-v))


def _draw_x(rng, n: int) -> np.ndarray:
    return rng.standard_normal((n, 3)) @ _CHOL.T


def _selection_prob(x, design: SimDesign):
    score = design.beta_0 + x @ np.asarray(design.beta)
    p = _expit(score)
    if design.overlap == "PARTIAL":
        p = np.where(p <= design.omega, p, 1.0)
    return p


def _in_support(x, design: SimDesign):
    """True where X lies in the target support V."""
    if design.overlap == "FULL":
        return np.ones(len(x), dtype=bool)
    return _expit(design.beta_0 + x @ np.asarray(design.beta)) \
        <= design.omega


_calibration_cache: dict = {}


def calibrate_intercepts(design: SimDesign) -> SimDesign:
    """Root-find the selection and trial-allocation intercepts on a
    fixed Monte Carlo sample so the expected study size, the outside-V
    share (partial design), and the trial shares hit their targets."""
    key = (design.total_n, design.target_study_n, design.overlap,
           design.balanced_trials, design.outside_frac, design.beta,
           design.zeta, design.zeta_tilde)
    if key in _calibration_cache:
        c = _calibration_cache[key]
        return replace(design, **c)

    rng = np.random.default_rng(np.random.SeedSequence(CALIBRATION_SEED))
    x = _draw_x(rng, CALIBRATION_DRAWS)
    score_x = x @ np.asarray(design.beta)
    frac = design.target_study_n / design.total_n

    if design.overlap == "FULL":
        def mean_sel(b0):
            return float(_expit(b0 + score_x).mean()) - frac
        try:
            beta_0 = brentq(mean_sel, -20, 20, xtol=1e-10)
        except ValueError as err:
            raise RootFindFailure(f"selection intercept: {err}") from err
        omega = None
    else:
        # The support boundary is a fixed quantile of the raw selection
        # score, so a share outside_frac of all draws falls outside V and
        # is forced into the study. The intercept is then calibrated so
        # the expected number of inside-V selections equals the nominal
        # study size; the realized study sample is larger by the forced
        # outside-V units.
        out_q = design.outside_frac
        if frac >= 1.0 - out_q:
            raise RootFindFailure(
                "inside-V mass too small for the requested study size")
        cutoff = float(np.quantile(score_x, 1.0 - out_q))
        inside = score_x <= cutoff

        def mean_sel(b0):
            return float((_expit(b0 + score_x) * inside).mean()) - frac
        try:
            beta_0 = brentq(mean_sel, -30, 10, xtol=1e-10)
        except ValueError as err:
            raise RootFindFailure(f"selection intercept: {err}") from err
        omega = float(_expit(beta_0 + cutoff))

    # trial allocation: damped Newton on conditional-on-selection shares
    tmp = replace(design, beta_0=beta_0, omega=omega)
    p_sel = _selection_prob(x, tmp)
    wt = p_sel / p_sel.sum()
    s2_target = design.trial_shares()[1]
    s3_target = design.trial_shares()[2]
    a2 = x @ np.asarray(design.zeta)
    a3 = x @ np.asarray(design.zeta_tilde)
    z0, zt0 = 0.0, 0.0
    for _ in range(200):
        e2 = np.exp(z0 + a2)
        e3 = np.exp(zt0 + a3)
        denom = 1.0 + e2 + e3
        p2 = e2 / denom
        p3 = e3 / denom
        f = np.array([float(wt @ p2) - s2_target,
                      float(wt @ p3) - s3_target])
        if np.max(np.abs(f)) < 1e-10:
            break
        j = np.array([
            [float(wt @ (p2 * (1 - p2))), float(wt @ (-p2 * p3))],
            [float(wt @ (-p2 * p3)), float(wt @ (p3 * (1 - p3)))]])
        try:
            step = np.linalg.solve(j, -f)
        except np.linalg.LinAlgError as err:
            raise RootFindFailure(f"trial allocation: {err}") from err
        step = np.clip(step, -2.0, 2.0)
        z0 += step[0]
        zt0 += step[1]
    else:
        raise RootFindFailure("trial-share Newton did not converge")

    c = {"beta_0": float(beta_0),
         "omega": None if omega is None else float(omega),
         "zeta_0": float(z0), "zeta_tilde_0": float(zt0)}
    _calibration_cache[key] = c
    return replace(design, **c)


@dataclass
class SimDraw:
    study_data: IdDataset
    target_x: np.ndarray
    truth_flags: np.ndarray      # per study unit: X in V
    true_tau_sample: float       # target-sample average of Y(1) - Y(0)


def generate_dataset(design: SimDesign, rep_seed) -> SimDraw:
    """One full draw. `rep_seed` may be an int or a SeedSequence."""
    if not design.calibrated:
        raise CalibrationMissing("run calibrate_intercepts first")
    seq = rep_seed if isinstance(rep_seed, np.random.SeedSequence) \
        else np.random.SeedSequence(rep_seed)
    rng = np.random.default_rng(seq)

    x = _draw_x(rng, design.total_n)
    p_sel = _selection_prob(x, design)
    s = rng.random(design.total_n) < p_sel
    inside = _in_support(x, design)

    n_study = int(s.sum())
    xs = x[s]
    a2 = design.zeta_0 + xs @ np.asarray(design.zeta)
    a3 = design.zeta_tilde_0 + xs @ np.asarray(design.zeta_tilde)
    e2, e3 = np.exp(a2), np.exp(a3)
    denom = 1.0 + e2 + e3
    u = rng.random(n_study)
    p1 = 1.0 / denom
    g = np.where(u < p1, 1, np.where(u < p1 + e2 / denom, 2, 3))

    pz = np.asarray(design.z_probs())[g - 1]
    z = (rng.random(n_study) < pz).astype(int)

    eps1 = rng.standard_normal(design.total_n)
    eps0 = rng.standard_normal(design.total_n)
    y1 = design.theta_10 + x @ np.asarray(design.theta_1) + eps1
    y0 = design.theta_00 + x @ np.asarray(design.theta_0) + eps0
    if design.overlap == "PARTIAL":
        # outside V the outcome models tilt by half the selection score's
        # distance to the boundary level, vanishing on the boundary of V
        shift = 0.5 * ((design.beta_0 + x @ np.asarray(design.beta))
                       - math.log(design.omega / (1.0 - design.omega)))
        y1 = np.where(inside, y1, y1 + shift)
        y0 = np.where(inside, y0, y0 - shift)

    y = np.where(z == 1, y1[s], y0[s])
    study_data = IdDataset(
        study=g.astype(int), z=z.astype(int), x=xs.copy(), y=y,
        covariate_names=("x1", "x2", "x3"),
        original_labels=(1, 2, 3))
    target_mask = ~s
    return SimDraw(
        study_data=study_data,
        target_x=x[target_mask].copy(),
        truth_flags=inside[s],
        true_tau_sample=float(np.mean(y1[target_mask] - y0[target_mask])),
    )


def truth_oracle(design: SimDesign, draws: int = 10 ** 7,
                 seed: int = 424243) -> float:
    """Population target effect by brute force: simulate selection and
    average the individual effect over non-selected units."""
    if not design.calibrated:
        design = calibrate_intercepts(design)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total_effect = 0.0
    total_count = 0
    chunk = 10 ** 6
    done = 0
    t1 = np.asarray(design.theta_1)
    t0 = np.asarray(design.theta_0)
    while done < draws:
        k = min(chunk, draws - done)
        x = _draw_x(rng, k)
        p = _selection_prob(x, design)
        keep = rng.random(k) >= p
        xt = x[keep]
        eff = (design.theta_10 - design.theta_00) + xt @ (t1 - t0)
        total_effect += float(eff.sum())
        total_count += int(keep.sum())
        done += k
    return total_effect / total_count


# ---------------------------------------------------------------------------
# Replication harness
# ---------------------------------------------------------------------------

@dataclass
class SimMetrics:
    per_estimator: dict          # name -> {bias, sd, rmse, ci_length, coverage}
    replications: int
    failures: dict = field(default_factory=dict)
    true_tau: float = float("nan")


def _run_single(design: SimDesign, rep_seed, estimator_names,
                ci_level: float = 0.95) -> dict:
    draw = generate_dataset(design, rep_seed)
    data = draw.study_data
    spec = identity_spec(3)
    means = draw.target_x.mean(axis=0)
    profile = target_profile_from_means(means, tolerances=0.0,
                                        n_star=len(draw.target_x))
    out = {}
    if "bounded" in estimator_names:
        rep, s1, s0 = estimate_id(data, spec, profile, bounded=True)
        out["bounded"] = {"tau": rep.tau_hat}
        bmat = evaluate_basis(data, spec)
        prof_scaled = scale_profile(profile, bmat)
        vr = plugin_variance_id(data, s1, s0, bmat, prof_scaled,
                                rep.tau_hat, level=ci_level)
        out["bounded"]["ci"] = vr.ci[:2]
        out["bounded"]["solutions"] = (s1, s0)
    if "unbounded" in estimator_names:
        rep, _, _ = estimate_id(data, spec, profile, bounded=False)
        out["unbounded"] = {"tau": rep.tau_hat}
    if "g" in estimator_names:
        out["g"] = {"tau": g_formula(data, draw.target_x).tau_hat}
    if "ipw" in estimator_names:
        out["ipw"] = {"tau": ipw_estimator(data, draw.target_x).tau_hat}
    if "aug" in estimator_names:
        out["aug"] = {"tau":
                      augmented_estimator(data, draw.target_x).tau_hat}
    out["_true_sample"] = draw.true_tau_sample
    return out


def _replicate_worker(args):
    design, child, names = args
    try:
        res = _run_single(design, child, names)
    except Exception:
        return None
    # solver objects are heavy and not needed for the metrics
    slim = {}
    for name in names:
        if name in res:
            slim[name] = {k: res[name][k] for k in ("tau", "ci")
                          if k in res[name]}
    return slim


def run_replications(design: SimDesign,
                     estimator_names: Sequence = ("bounded", "unbounded",
                                                  "ipw", "aug"),
                     r: int = 500, master_seed: int = 0,
                     true_tau: Optional[float] = None,
                     oracle_draws: int = 10 ** 7,
                     threads: int = 1) -> SimMetrics:
    """Replicate the design, compute per-estimator bias / SD / RMSE /
    CI metrics against the population truth. Deterministic given
    (design, master_seed, r), whatever the worker count."""
    if not design.calibrated:
        design = calibrate_intercepts(design)
    if true_tau is None:
        true_tau = truth_oracle(design, draws=oracle_draws)

    taus: dict = {name: [] for name in estimator_names}
    cis: list = []
    failures: dict = {name: 0 for name in estimator_names}
    root = np.random.SeedSequence(master_seed)
    children = root.spawn(r)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        jobs = [(design, c, tuple(estimator_names)) for c in children]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_worker, jobs, chunksize=8))
    else:
        results = [_replicate_worker((design, c, tuple(estimator_names)))
                   for c in children]
    for res in results:
        if res is None:
            for name in estimator_names:
                failures[name] += 1
            continue
        for name in estimator_names:
            if name in res:
                taus[name].append(res[name]["tau"])
                if name == "bounded" and "ci" in res[name]:
                    cis.append(res[name]["ci"])

    per = {}
    for name in estimator_names:
        vals = np.array(taus[name])
        if len(vals) == 0:
            per[name] = {"bias": float("nan")}
            continue
        err = vals - true_tau
        bias = float(err.mean())
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rmse = float(np.sqrt(np.mean(err ** 2)))
        entry = {"bias": bias, "sd": sd, "rmse": rmse,
                 "n_reps": int(len(vals))}
        if name == "bounded" and cis:
            arr = np.array(cis)
            entry["ci_length"] = float(np.mean(arr[:, 1] - arr[:, 0]))
            entry["coverage"] = float(np.mean(
                (arr[:, 0] <= true_tau) & (true_tau <= arr[:, 1])))
        per[name] = entry
    return SimMetrics(per_estimator=per, replications=r,
                      failures=failures, true_tau=float(true_tau))
