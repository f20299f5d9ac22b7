"""Weight diagnostics: ESS, ASMD, sign reversal, support detection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metabalance.basis import evaluate_basis, identity_spec, scale_profile
from metabalance.diagnostics import (asmd_report, build_bundle,
                                     bundle_summary,
                                     effective_sample_size,
                                     sign_reversal_report,
                                     support_detection_summary)
from metabalance.errors import NotApplicable, ZeroWeights
from metabalance.estimators import estimate_id
from metabalance.model import target_profile_from_means

from conftest import make_id_dataset


def test_ess_known_value():
    assert effective_sample_size([0.75, 0.25, 0.0]) == pytest.approx(
        1.6, abs=1e-12)


def test_ess_rejects_all_zero():
    with pytest.raises(ZeroWeights):
        effective_sample_size([0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 50))
def test_ess_between_one_and_n(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n))
    ess = effective_sample_size(w)
    assert 1.0 - 1e-9 <= ess <= n + 1e-9


def test_sign_reversal_on_minimum_norm_weights():
    # the hand instance has one negative weight of mass 1/24
    w = np.array([17.0, 8.0, -1.0]) / 24.0
    rep = sign_reversal_report(w, outcomes=[10.0, 20.0, 30.0])
    assert rep["count"] == 1
    assert rep["units"] == [2]
    assert rep["negative_mass"] == pytest.approx(1.0 / 24.0, abs=1e-12)
    wit = rep["witness"][0]
    assert wit["d_tau_d_y"] < 0 and wit["outcome"] == 30.0


def test_sign_reversal_empty_for_nonnegative():
    rep = sign_reversal_report([0.5, 0.5, 0.0])
    assert rep["count"] == 0 and rep["negative_mass"] == 0.0


def test_asmd_bounded_by_tolerance(rng):
    # solving with per-column tolerance 0.1 (in sd units of the
    # standardized basis) caps the reported imbalance at 0.1
    data = make_id_dataset(rng, n=150, p=3, m=2)
    spec = identity_spec(3, standardize=True)
    prof = target_profile_from_means([0.3, -0.2, 0.1],
                                     tolerances=[0.1, 0.1, 0.1])
    _, sol1, sol0 = estimate_id(data, spec, prof)
    bmat = evaluate_basis(data, spec)
    sprof = scale_profile(prof, bmat)
    rows = asmd_report(bmat.values,
                       {1: (data.z == 1, sol1.weights),
                        0: (data.z == 0, sol0.weights)}, sprof,
                       include_uniform=False)
    # pooled sd of a standardized column is 1, so asmd == |imbalance|
    assert all(r["asmd"] <= 0.1 + 1e-7 for r in rows)


def test_asmd_flags_zero_variance_column():
    b = np.column_stack([np.ones(4), np.full(4, 2.0)])
    prof = target_profile_from_means([2.0])
    rows = asmd_report(b, {"all": (np.ones(4, dtype=bool),
                                   np.full(4, 0.25))}, prof)
    assert rows[0]["asmd"] is None and rows[0]["note"] == "zero variance"


def test_support_detection_counts():
    w = np.array([0.5, 0.5, 0.0, 0.0])
    flags = np.array([True, True, True, False])
    tpr, tnr = support_detection_summary(w, flags)
    assert tpr == pytest.approx(2.0 / 3.0)
    assert tnr == 1.0


def test_support_detection_rejects_negative_weights():
    with pytest.raises(NotApplicable):
        support_detection_summary([0.6, 0.5, -0.1], [True, True, False])


def test_bundle_and_summary(rng):
    data = make_id_dataset(rng, n=100, p=2, m=2)
    spec = identity_spec(2)
    prof = target_profile_from_means([0.1, 0.0])
    _, sol1, sol0 = estimate_id(data, spec, prof)
    bmat = evaluate_basis(data, spec)
    bundle = build_bundle(data, sol1, sol0, bmat.values,
                          scale_profile(prof, bmat))
    assert len(bundle.weight_records) == data.n
    assert bundle.negative_weight_count == 0
    # donor shares per group sum to one (normalized weights)
    for z in (0, 1):
        assert sum(bundle.donor_shares[z].values()) == pytest.approx(
            1.0, abs=1e-7)
    summary = bundle_summary(bundle)
    assert summary["retained"]["1"] == int(len(sol1.retained))
    assert summary["max_asmd"] >= 0.0
    assert set(summary["lambda_dual"]) == {0, 1}
