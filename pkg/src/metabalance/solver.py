"""Constrained dispersion-minimization solver and verification oracle.

The primal problem over one group's rows is

    min_w  sum_i c_i psi(w_i)
    s.t.   |sum_i w_i B_k(x_i) - b*_k| <= delta_k   for k = 1..K
           w_i >= 0                                  (when nonneg)

with psi(w) = w^2 (SQUARED_L2) or w log w (NEG_ENTROPY). It is solved
through its dual: minimize over lambda

    G(lambda) = sum_i c_i g(v_i) + (b*)^T lambda + delta^T |lambda|,
    v_i = B_i^T lambda / c_i,

where g is the dispersion-specific conjugate piece, and primal weights
are recovered as w_i = w(v_i). For SQUARED_L2, w(v) = max(0, -v/2)
(bounded) or -v/2 (unbounded); for NEG_ENTROPY, w(v) = exp(-v - 1),
which is positive everywhere so the bounded and unbounded programs
coincide. The gradient of the smooth part is b* - B^T w(v), so a zero
gradient is exactly primal balance.

delta > 0 is handled by the split lambda = lp - lm with lp, lm >= 0,
which turns the L1 term into a smooth bound-constrained problem; the
resulting active pattern is then refined by re-solving the smooth
equality-constrained subproblem to machine precision.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import Infeasible, MaxIterations, RankDeficient, TooLarge

KKT_TOL = 1e-9
MAX_ITER = 500
ARMIJO_C = 1e-4
DIVERGENCE_CUTOFF = -1e9
PINV_RCOND = 1e-12


@dataclass(frozen=True)
class BalanceProblem:
    b: np.ndarray                  # n_z x K rows for the weighted group
    b_star: np.ndarray             # length K
    delta: np.ndarray              # length K, >= 0
    dispersion: str = "SQUARED_L2"  # or NEG_ENTROPY
    nonneg: bool = True
    scale: Optional[np.ndarray] = None   # c_i > 0, default all ones

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b_star",
                           np.asarray(self.b_star, dtype=float))
        object.__setattr__(self, "delta",
                           np.asarray(self.delta, dtype=float))
        c = (np.ones(b.shape[0]) if self.scale is None
             else np.asarray(self.scale, dtype=float))
        object.__setattr__(self, "scale", c)
        if b.shape[0] < 1:
            raise ValueError("need at least one row")
        if b.shape[1] != self.b_star.shape[0] or \
                self.b_star.shape != self.delta.shape:
            raise ValueError("dimension mismatch between B, b_star, delta")
        if np.any(self.delta < 0):
            raise ValueError("delta must be non-negative")
        if np.any(c <= 0):
            raise ValueError("scale must be positive")
        if self.dispersion not in ("SQUARED_L2", "NEG_ENTROPY"):
            raise ValueError(f"unknown dispersion {self.dispersion!r}")

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def k(self) -> int:
        return self.b.shape[1]


@dataclass
class WeightSolution:
    weights: np.ndarray
    lambda_dual: np.ndarray
    retained: np.ndarray           # indices with w > 0
    kkt_residual: float
    iterations: int
    objective: float
    converged: bool = True
    extra: dict = field(default_factory=dict)


def _pieces(v: np.ndarray, dispersion: str, nonneg: bool):
    """Return (g(v), w(v), curvature a(v)) with a = -w'(v) >= 0."""
    if dispersion == "SQUARED_L2":
        if nonneg:
            vm = np.minimum(v, 0.0)
            return 0.25 * vm * vm, -0.5 * vm, 0.5 * (v < 0)
        return 0.25 * v * v, -0.5 * v, np.full_like(v, 0.5)
    e = np.exp(-v - 1.0)
    return e, e, e


def _primal_objective(w: np.ndarray, prob: BalanceProblem) -> float:
    if prob.dispersion == "SQUARED_L2":
        return float(np.sum(prob.scale * w * w))
    pos = w > 0
    return float(np.sum(prob.scale[pos] * w[pos] * np.log(w[pos])))


def dual_objective(lam: np.ndarray, prob: BalanceProblem):
    """Value and gradient of the dual objective at lambda.

    When delta > 0 the L1 term contributes delta * sign(lambda) to the
    gradient (a subgradient choice of 0 at lambda_k = 0).
    """
    lam = np.asarray(lam, dtype=float)
    v = prob.b @ lam / prob.scale
    g, w, _ = _pieces(v, prob.dispersion, prob.nonneg)
    value = float(prob.scale @ g + prob.b_star @ lam
                  + prob.delta @ np.abs(lam))
    grad = prob.b_star - prob.b.T @ w + prob.delta * np.sign(lam)
    return value, grad


def _smooth_value_grad(lam, prob):
    v = prob.b @ lam / prob.scale
    g, w, a = _pieces(v, prob.dispersion, prob.nonneg)
    value = float(prob.scale @ g + prob.b_star @ lam)
    grad = prob.b_star - prob.b.T @ w
    return value, grad, w, a


def _newton(prob: BalanceProblem, lam0=None, tol=KKT_TOL,
            max_iter=MAX_ITER):
    """Minimize the smooth dual (delta treated as 0) by a damped
    (semismooth) Newton method with Armijo backtracking and a gradient
    fallback on near-singular Newton systems."""
    lam = np.zeros(prob.k) if lam0 is None else np.array(lam0, dtype=float)
    gscale = 1.0 + float(np.abs(prob.b_star).max(initial=0.0))
    value, grad, w, a = _smooth_value_grad(lam, prob)
    for it in range(1, max_iter + 1):
        gnorm = float(np.abs(grad).max(initial=0.0))
        if gnorm <= tol * gscale:
            return lam, gnorm, it - 1, True
        if value < DIVERGENCE_CUTOFF:
            raise Infeasible(
                "dual objective unbounded below: balance constraints "
                "cannot be met",
                certificate={"dual_ray": (lam / max(np.linalg.norm(lam),
                                                    1.0)).tolist()})
        h = (prob.b * (a / prob.scale)[:, None]).T @ prob.b
        try:
            step = np.linalg.solve(
                h + 1e-13 * max(np.trace(h), 1.0) * np.eye(prob.k), -grad)
        except np.linalg.LinAlgError:
            step = -grad
        if grad @ step > -1e-16 * gscale * gscale:
            step = -grad
        t = 1.0
        slope = float(grad @ step)
        accepted = False
        for _ in range(60):
            cand = lam + t * step
            cval, cgrad, cw, ca = _smooth_value_grad(cand, prob)
            if cval <= value + ARMIJO_C * t * slope:
                lam, value, grad, w, a = cand, cval, cgrad, cw, ca
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    gnorm = float(np.abs(grad).max(initial=0.0))
    return lam, gnorm, max_iter, gnorm <= 1e3 * tol * gscale


def _solve_split(prob: BalanceProblem):
    """Bound-constrained minimization of the split-variable dual for
    delta > 0."""
    k = prob.k

    def fun(u):
        lam = u[:k] - u[k:]
        value, grad, _, _ = _smooth_value_grad(lam, prob)
        value += float(prob.delta @ (u[:k] + u[k:]))
        return value, np.concatenate([grad + prob.delta,
                                      -grad + prob.delta])

    res = minimize(fun, np.zeros(2 * k), jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * (2 * k),
                   options={"maxiter": 4000, "ftol": 1e-18, "gtol": 1e-12})
    if res.fun < DIVERGENCE_CUTOFF:
        lam = res.x[:k] - res.x[k:]
        raise Infeasible(
            "dual objective unbounded below: balance constraints "
            "cannot be met",
            certificate={"dual_ray": (lam / max(np.linalg.norm(lam),
                                                1.0)).tolist()})
    return res.x[:k] - res.x[k:], int(res.nit)


def _weights_from_lambda(lam, prob):
    v = prob.b @ lam / prob.scale
    _, w, _ = _pieces(v, prob.dispersion, prob.nonneg)
    return w


def _feasibility_gap(w, prob):
    r = prob.b.T @ w - prob.b_star
    return float(np.max(np.maximum(np.abs(r) - prob.delta, 0.0),
                        initial=0.0))


def _refine_pattern(lam, prob: BalanceProblem, thresh):
    """Re-solve the smooth equality subproblem implied by lambda's
    active pattern; returns None if the refined point violates the
    inactive tolerance rows."""
    active = (prob.delta == 0) | (np.abs(lam) > thresh)
    if not active.any():
        w = _weights_from_lambda(np.zeros(prob.k), prob)
        return (np.zeros(prob.k), w) if _feasibility_gap(w, prob) <= KKT_TOL \
            else None
    sign = np.where(prob.delta > 0, np.sign(lam), 0.0)
    target = prob.b_star + prob.delta * sign
    sub = BalanceProblem(
        b=prob.b[:, active], b_star=target[active],
        delta=np.zeros(int(active.sum())), dispersion=prob.dispersion,
        nonneg=prob.nonneg, scale=prob.scale)
    try:
        lam_sub, gnorm, _, ok = _newton(sub, lam0=lam[active])
    except Infeasible:
        return None
    if not ok:
        return None
    full = np.zeros(prob.k)
    full[active] = lam_sub
    w = _weights_from_lambda(full, prob)
    r = prob.b.T @ w - prob.b_star
    inactive = ~active
    if np.any(np.abs(r[inactive]) > prob.delta[inactive] + 10 * KKT_TOL):
        return None
    # active tolerance rows must sit on the side the multiplier selected
    act_tol = active & (prob.delta > 0)
    if np.any(np.abs(r[act_tol] - prob.delta[act_tol] * sign[act_tol])
              > 1e-6 * (1.0 + np.abs(prob.b_star[act_tol]))):
        return None
    return full, w


def solve_balancing_weights(prob: BalanceProblem) -> WeightSolution:
    """Solve the balancing program through its dual.

    Raises Infeasible with a dual-ray certificate when no weight vector
    satisfies the constraints; raises MaxIterations (solution attached)
    when the iteration cap is hit far from a KKT point.
    """
    if np.all(prob.delta == 0):
        lam, gnorm, iters, ok = _newton(prob)
        w = _weights_from_lambda(lam, prob)
        if not ok and gnorm > 1e-6 * (1.0 + np.abs(prob.b_star).max()):
            sol = _package(w, lam, gnorm, iters, prob, converged=False)
            raise MaxIterations(
                f"no KKT point within {MAX_ITER} iterations "
                f"(gradient norm {gnorm:.3e})", solution=sol)
        return _package(w, lam, gnorm, iters, prob, converged=ok)

    lam, iters = _solve_split(prob)
    best = None
    for thresh in (1e-6 * (1.0 + np.abs(lam).max()), 1e-8, 1e-10):
        refined = _refine_pattern(lam, prob, thresh)
        if refined is None:
            continue
        rl, rw = refined
        gap = _feasibility_gap(rw, prob)
        obj = _primal_objective(rw, prob)
        if gap <= 10 * KKT_TOL and (best is None or obj < best[2]):
            best = (rl, rw, obj)
    if best is not None:
        rl, rw, _ = best
        _, grad = dual_objective(rl, prob)
        mask = np.abs(rl) > 0
        gnorm = float(np.abs(grad[mask]).max(initial=0.0))
        return _package(rw, rl, gnorm, iters, prob, converged=True)

    w = _weights_from_lambda(lam, prob)
    _, grad = dual_objective(lam, prob)
    gnorm = float(np.abs(grad).max(initial=0.0))
    converged = gnorm <= 1e-6 * (1.0 + np.abs(prob.b_star).max())
    sol = _package(w, lam, gnorm, iters, prob, converged=converged)
    if not converged:
        raise MaxIterations(
            f"split-variable stage stalled (gradient norm {gnorm:.3e})",
            solution=sol)
    return sol


def _package(w, lam, kkt, iters, prob, converged=True):
    w = np.where(w > 0, w, 0.0) if prob.nonneg else w
    return WeightSolution(
        weights=w,
        lambda_dual=np.asarray(lam, dtype=float),
        retained=np.flatnonzero(w > 0),
        kkt_residual=float(kkt),
        iterations=int(iters),
        objective=_primal_objective(w, prob),
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Exact enumeration oracle (SQUARED_L2 only, small instances)
# ---------------------------------------------------------------------------

def solve_qp_oracle(prob: BalanceProblem) -> WeightSolution:
    """Exact active-set enumeration for small SQUARED_L2 problems.

    Every candidate pairs a retained subset with an activity pattern for
    the tolerance rows ({at +delta, at -delta, strictly inside}); the
    equality KKT system is solved for each and primal plus dual
    feasibility checked. Deterministic and independent of the iterative
    path, so it serves as ground truth.
    """
    if prob.dispersion != "SQUARED_L2":
        raise ValueError("oracle supports SQUARED_L2 only")
    if prob.n > 16 or prob.k > 6:
        raise TooLarge(f"oracle limited to n<=16, K<=6 "
                       f"(got n={prob.n}, K={prob.k})")
    n, k = prob.n, prob.k
    c = prob.scale
    tol_rows = np.flatnonzero(prob.delta > 0)
    eq_rows = np.flatnonzero(prob.delta == 0)

    if prob.nonneg:
        subsets = np.arange(1, 2 ** n)
        indic = ((subsets[:, None] >> np.arange(n)) & 1).astype(float)
    else:
        subsets = np.array([2 ** n - 1])
        indic = np.ones((1, n))

    best = None
    for pattern in itertools.product((0, 1, -1), repeat=len(tol_rows)):
        sign = np.zeros(k)
        sign[tol_rows] = pattern
        active = np.concatenate([eq_rows,
                                 tol_rows[np.array(pattern) != 0]]) \
            if len(tol_rows) else eq_rows
        active = np.sort(active.astype(int))
        if len(active) == 0:
            w = np.zeros(n)
            r = prob.b.T @ w - prob.b_star
            if np.all(np.abs(r) <= prob.delta + 1e-9):
                cand = (0.0, w, np.zeros(k))
                if best is None or cand[0] < best[0]:
                    best = cand
            continue
        be = prob.b[:, active]                        # n x e
        btil = (prob.b_star + prob.delta * sign)[active]
        m_i = be[:, :, None] * be[:, None, :] / (2.0 * c)[:, None, None]
        e = len(active)
        a_all = (indic @ m_i.reshape(n, e * e)).reshape(-1, e, e)
        mu = np.einsum("sij,j->si", np.linalg.pinv(a_all,
                                                   rcond=PINV_RCOND), btil)
        # consistency of the (possibly singular) KKT system
        resid = np.einsum("sij,sj->si", a_all, mu) - btil
        consistent = np.max(np.abs(resid), axis=1) <= 1e-8 * (
            1.0 + np.abs(btil).max(initial=0.0))
        vmat = (be @ mu.T) / (2.0 * c)[:, None]       # n x nsub
        w_all = vmat * indic.T
        ok = consistent.copy()
        if prob.nonneg:
            ok &= np.min(np.where(indic.T > 0, vmat, 0.0), axis=0) >= -1e-10
            ok &= np.max(np.where(indic.T > 0, 0.0, vmat), axis=0) <= 1e-10
        bal = prob.b.T @ w_all                         # k x nsub
        rfull = bal - prob.b_star[:, None]
        inact = prob.delta > 0
        inact_mask = inact & (sign == 0)
        if inact_mask.any():
            ok &= np.all(np.abs(rfull[inact_mask, :])
                         <= prob.delta[inact_mask, None] + 1e-9, axis=0)
        act_pos = np.flatnonzero((sign > 0))
        act_neg = np.flatnonzero((sign < 0))
        if len(act_pos) or len(act_neg):
            pos_in_e = np.searchsorted(active, act_pos)
            neg_in_e = np.searchsorted(active, act_neg)
            if len(act_pos):
                ok &= np.all(mu[:, pos_in_e] <= 1e-10, axis=1)
            if len(act_neg):
                ok &= np.all(mu[:, neg_in_e] >= -1e-10, axis=1)
        eqm = np.abs(rfull[prob.delta == 0, :])
        if eqm.size:
            ok &= np.all(eqm <= 1e-8 * (1.0 + np.abs(prob.b_star).max()),
                         axis=0)
        if not ok.any():
            continue
        objs = np.sum(c[:, None] * w_all * w_all, axis=0)
        objs = np.where(ok, objs, np.inf)
        s = int(np.argmin(objs))
        lam = np.zeros(k)
        lam[active] = -mu[s]
        cand = (float(objs[s]), np.where(np.abs(w_all[:, s]) < 1e-300, 0.0,
                                         w_all[:, s]), lam)
        if best is None or cand[0] < best[0] - 1e-15:
            best = cand
    if best is None:
        raise Infeasible("no retained-set / activity pattern satisfies the "
                         "constraints", certificate={
                             "delta": prob.delta.tolist(),
                             "b_star": prob.b_star.tolist()})
    obj, w, lam = best
    if prob.nonneg:
        w = np.where(w > 1e-12, w, 0.0)
    return WeightSolution(
        weights=w, lambda_dual=lam, retained=np.flatnonzero(w > 0),
        kkt_residual=0.0, iterations=0, objective=float(obj),
        converged=True)


# ---------------------------------------------------------------------------
# Implied weights of the pooled common-effect regression
# ---------------------------------------------------------------------------

def ols_implied_weights(data, f_set, c_set, z: int) -> WeightSolution:
    """Minimum-norm weights for group z subject to normalization,
    across-group zero balance on covariates in `c_set`, and per-study
    zero balance on covariates in `f_set`.

    The weighted outcome contrast built from these weights equals the
    treatment coefficient of the pooled common-intercept, common-effect
    regression with per-study covariate blocks for `f_set`.
    """
    f_set = sorted(set(f_set))
    c_set = sorted(set(c_set))
    mask = data.z == z
    x = data.x[mask]
    study = data.study[mask]
    n_z = x.shape[0]

    cols = [np.ones(n_z)]
    targets = [1.0]
    for l in c_set:
        cols.append(x[:, l - 1])
        targets.append(0.0)
    for i in range(1, data.m + 1):
        for l in f_set:
            cols.append((study == i) * x[:, l - 1])
            targets.append(0.0)
    a = np.vstack(cols)                   # r x n_z constraint matrix
    btarget = np.asarray(targets)

    gram = a @ a.T
    y_mult = np.linalg.pinv(gram, rcond=PINV_RCOND) @ btarget
    w = a.T @ y_mult
    if np.max(np.abs(a @ w - btarget)) > 1e-8:
        raise RankDeficient(
            "balance constraints inconsistent: pooled design is rank "
            "deficient for this F/C partition")
    full = np.zeros(data.n)
    full[mask] = w
    return WeightSolution(
        weights=full,
        lambda_dual=-2.0 * y_mult,
        retained=np.flatnonzero(full > 0),
        kkt_residual=float(np.max(np.abs(a @ w - btarget))),
        iterations=0,
        objective=float(w @ w),
        converged=True,
        extra={"group": z},
    )
