"""Variance estimation and confidence intervals.

Three variance estimators: a heuristic one for unit-level weighting
estimators built on the residual variance of the pooled adjusted
regression, a plug-in estimator adding a between-coefficient balance
term, and the study-level analogue for aggregate-data weighting. Plus a
stratified nonparametric bootstrap.

Scaling convention, stated explicitly because it is easy to get wrong:
v_heuristic and v_plugin estimate the variance of sqrt(n) * (tau_hat -
tau), so normal CIs use tau_hat +/- z * sqrt(v / n). The study-level
variance is on the sqrt(m) scale accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import (DegenerateRegression, MissingNStar, RankDeficient,
                     ZeroWeights)
from .model import IdDataset, TargetProfile


@dataclass
class VarianceReport:
    v_heuristic: Optional[float] = None
    v_plugin: Optional[float] = None
    residual_s2: Optional[float] = None
    ess_treated: Optional[float] = None
    ess_control: Optional[float] = None
    ci: Optional[tuple] = None      # (lower, upper, level)
    flags: dict = field(default_factory=dict)


def _combined_weights(data: IdDataset, sol1, sol0) -> np.ndarray:
    """Effective per-unit weight of the contrast estimator.

    Balancing solutions carry group-length weight vectors with disjoint
    support; implied-regression weights are full length and can overlap,
    in which case the contrast weight is their difference."""
    if len(sol1.weights) == data.n and len(sol0.weights) == data.n:
        return sol1.weights - sol0.weights
    w = np.zeros(data.n)
    w[data.z == 1] = sol1.weights
    w[data.z == 0] = sol0.weights
    return w


def _ess(w: np.ndarray) -> float:
    s = float(np.sum(w * w))
    if s == 0:
        raise ZeroWeights("all weights zero")
    return 1.0 / s


def _adjustment_design(data: IdDataset, f_set, c_set) -> np.ndarray:
    """Covariate part of the pooled regression: constant, common and
    per-study main effects and treatment interactions (no treatment
    main-effect column)."""
    from .estimators import one_stage_design
    if c_set is None:
        c_set = [l for l in range(1, data.p + 1) if l not in set(f_set)]
    return one_stage_design(data, sorted(set(f_set)), sorted(set(c_set)),
                            include_treatment=False)


def heuristic_variance_id(data: IdDataset, sol1, sol0, tau_hat: float,
                          f_set: Sequence = (), c_set=None,
                          level: float = 0.95) -> VarianceReport:
    """V = n s^2 sum w^2 with s^2 the residual variance of the adjusted
    outcome regressed on the covariate design; degrees of freedom count
    the treatment column as well."""
    design = _adjustment_design(data, f_set, c_set)
    full = np.column_stack([design, data.z.astype(float)])
    rank_full = np.linalg.matrix_rank(full)
    dof = data.n - rank_full
    if dof <= 0:
        raise RankDeficient("no residual degrees of freedom")
    adj = data.y - tau_hat * data.z
    coef, _, rank, _ = np.linalg.lstsq(design, adj, rcond=None)
    if rank < np.linalg.matrix_rank(design):
        raise RankDeficient("adjustment design rank deficient")
    resid = adj - design @ coef
    s2 = float(resid @ resid) / dof
    w = _combined_weights(data, sol1, sol0)
    v = data.n * s2 * float(np.sum(w * w))
    se = np.sqrt(v / data.n)
    zq = norm.ppf(0.5 + level / 2.0)
    return VarianceReport(
        v_heuristic=v, residual_s2=s2,
        ess_treated=_ess(sol1.weights), ess_control=_ess(sol0.weights),
        ci=(tau_hat - zq * se, tau_hat + zq * se, level),
        flags={"scaling": "sqrt_n"})


def plugin_variance_id(data: IdDataset, sol1, sol0, basis_matrix,
                       profile: TargetProfile, tau_hat: float,
                       level: float = 0.95) -> VarianceReport:
    """Plug-in variance: weighted residual term from per-group outcome
    regressions on the basis within each retained subset, plus a
    quadratic form in the coefficient gap against the basis spread
    around the target.

    The spread matrix is projected onto the PSD cone (negative
    eigenvalues clipped, flagged) so the second term cannot be negative.
    """
    b = basis_matrix.values if hasattr(basis_matrix, "values") \
        else np.asarray(basis_matrix)
    k = b.shape[1]
    bstar = profile.basis_targets
    if bstar.shape[0] != k:
        bstar = bstar[:k]
    if profile.n_star is None:
        raise MissingNStar("plug-in variance needs the target sample size")

    w_full = _combined_weights(data, sol1, sol0)
    s2 = {}
    lam2 = {}
    for z, sol in ((1, sol1), (0, sol0)):
        mask = np.flatnonzero(data.z == z)
        sel = mask[sol.weights > 0]
        if len(sel) == 0:
            raise RankDeficient(f"empty retained set in group z={z}")
        bz = b[sel]
        yz = data.y[sel]
        coef, _, rank, _ = np.linalg.lstsq(bz, yz, rcond=None)
        dof = max(len(sel) - rank, 1)
        resid = yz - bz @ coef
        s2[z] = float(resid @ resid) / dof
        lam2[z] = coef

    s2_unit = np.where(data.z == 1, s2[1], s2[0])
    first = data.n * float(np.sum(w_full * w_full * s2_unit))

    s_b = (b.T * (w_full / 2.0)) @ b - np.outer(bstar, bstar)
    s_b = (s_b + s_b.T) / 2.0
    eigval, eigvec = np.linalg.eigh(s_b)
    clipped = bool((eigval < 0).any())
    eigval = np.maximum(eigval, 0.0)
    s_b_psd = (eigvec * eigval) @ eigvec.T
    gap = lam2[1] - lam2[0]
    second = (data.n / profile.n_star) * float(gap @ s_b_psd @ gap)

    v = first + second
    se = np.sqrt(v / data.n)
    zq = norm.ppf(0.5 + level / 2.0)
    return VarianceReport(
        v_plugin=v, residual_s2=(s2[1] + s2[0]) / 2.0,
        ess_treated=_ess(sol1.weights), ess_control=_ess(sol0.weights),
        ci=(tau_hat - zq * se, tau_hat + zq * se, level),
        flags={"scaling": "sqrt_n", "psd_clipped": clipped,
               "first_term": first, "second_term": second})


def heuristic_variance_ad(rows, sol, tau_hat: float,
                          level: float = 0.95) -> VarianceReport:
    """Study-level heuristic variance: residual variance of the study
    effects around their weighted-least-squares fit on the study basis
    means (weights 1/c_i), times m sum w^2."""
    from .estimators import _as_study_rows
    est = _as_study_rows(rows)
    m = est.m
    tau_i = np.array([r.tau_hat for r in est.rows])
    bbar = np.column_stack([np.ones(m),
                            np.vstack([r.basis_means for r in est.rows])])
    c = np.array([r.sigma2_hat for r in est.rows])
    k_eff = np.linalg.matrix_rank(bbar)
    if m <= k_eff:
        raise DegenerateRegression(
            f"need more studies ({m}) than basis columns ({k_eff})")
    wts = 1.0 / c
    sw = np.sqrt(wts)
    coef, _, _, _ = np.linalg.lstsq(bbar * sw[:, None],
                                    (tau_i - tau_hat) * sw, rcond=None)
    resid = (tau_i - tau_hat) - bbar @ coef
    s2 = float(wts @ (resid * resid)) / (m - k_eff)
    v = m * s2 * float(np.sum(sol.weights ** 2))
    se = np.sqrt(v / m)
    zq = norm.ppf(0.5 + level / 2.0)
    return VarianceReport(
        v_heuristic=v, residual_s2=s2,
        ci=(tau_hat - zq * se, tau_hat + zq * se, level),
        flags={"scaling": "sqrt_m"})


def bootstrap_ci(estimator_closure, data: IdDataset, b: int = 1000,
                 level: float = 0.95, seed: int = 0):
    """Quantile bootstrap CI, resampling units within study-by-arm
    strata so every replicate preserves the design. Deterministic given
    the seed; aborts if more than 5 percent of replicates fail."""
    if b < 100:
        raise ValueError("need at least 100 replicates")
    strata = []
    for i in range(1, data.m + 1):
        for z in (0, 1):
            idx = np.flatnonzero((data.study == i) & (data.z == z))
            if len(idx):
                strata.append(idx)
    root = np.random.SeedSequence(seed)
    children = root.spawn(b)
    stats = []
    failures = 0
    for r in range(b):
        rng = np.random.default_rng(children[r])
        take = np.concatenate([idx[rng.integers(0, len(idx), len(idx))]
                               for idx in strata])
        sample = data.subset(np.sort(take))
        try:
            stats.append(float(estimator_closure(sample)))
        except Exception:
            failures += 1
            if failures > 0.05 * b:
                raise DegenerateRegression(
                    f"{failures} bootstrap replicates failed")
    stats = np.array(stats)
    lo = float(np.quantile(stats, (1 - level) / 2))
    hi = float(np.quantile(stats, 1 - (1 - level) / 2))
    return lo, hi
