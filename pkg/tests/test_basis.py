"""Basis construction, evaluation, scaling, and within-study columns."""

import numpy as np
import pytest

from metabalance.basis import (augment_within_study, basis_target_means,
                               build_basis_spec, evaluate_basis,
                               identity_spec, scale_profile)
from metabalance.errors import IndexOutOfRange
from metabalance.estimators import estimate_id
from metabalance.model import target_profile_from_means

from conftest import make_id_dataset


def test_polynomial_row_on_scalar_input():
    spec = build_basis_spec(["constant", "identity:1", "square:1"], p=1,
                            standardize=False)
    bmat = evaluate_basis(np.array([[2.0]]), spec)
    assert bmat.values.tolist() == [[1.0, 2.0, 4.0]]


def test_constant_prepended_when_absent():
    spec = build_basis_spec(["identity:1"], p=1)
    assert spec.labels() == ["1", "x1"]
    assert spec.terms[0].kind == "CONSTANT"
    assert 1 in spec.across_set


def test_spec_config_round_trip():
    spec = build_basis_spec(
        ["identity:1", "identity:2", "square:2", "interaction:1,2"],
        p=2, within=(3,), standardize=False)
    cfg = spec.to_config()
    back = build_basis_spec(cfg["terms"], p=2, within=cfg["within"],
                            standardize=cfg["standardize"])
    assert back == spec


def test_covariate_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        build_basis_spec(["identity:3"], p=2)
    with pytest.raises(IndexOutOfRange):
        build_basis_spec(["interaction:1,4"], p=2)


def test_standardized_columns_have_unit_moments(rng):
    data = make_id_dataset(rng, n=100, p=3)
    bmat = evaluate_basis(data, identity_spec(3, standardize=True))
    vals = bmat.values
    assert np.allclose(vals[:, 0], 1.0)
    assert np.allclose(vals[:, 1:].mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(vals[:, 1:].std(axis=0, ddof=1), 1.0, atol=1e-12)


def test_recorded_scaling_reapplies_to_new_rows(rng):
    data = make_id_dataset(rng, n=60, p=2)
    spec = identity_spec(2, standardize=True)
    bmat = evaluate_basis(data, spec)
    again = evaluate_basis(data.x, spec, scaling=bmat.scaling)
    assert np.array_equal(again.values, bmat.values)


def test_scale_profile_maps_targets_onto_working_scale(rng):
    data = make_id_dataset(rng, n=60, p=2)
    bmat = evaluate_basis(data, identity_spec(2, standardize=True))
    prof = target_profile_from_means([0.4, -0.1])
    scaled = scale_profile(prof, bmat)
    for k in (1, 2):
        center, scale = bmat.scaling[k]
        assert scaled.basis_targets[k] == pytest.approx(
            (prof.basis_targets[k] - center) / scale, abs=1e-14)
    assert scaled.basis_targets[0] == 1.0


def test_estimate_invariant_to_standardization(rng):
    # at delta=0 the balancing program is affinely invariant, so the
    # standardized and raw bases must give the same point estimate
    data = make_id_dataset(rng, n=150, p=2, m=2)
    prof = target_profile_from_means([0.1, -0.2])
    rep_std, _, _ = estimate_id(data, identity_spec(2, standardize=True),
                                prof, bounded=False)
    rep_raw, _, _ = estimate_id(data, identity_spec(2, standardize=False),
                                prof, bounded=False)
    assert rep_std.tau_hat == pytest.approx(rep_raw.tau_hat, abs=1e-8)


def test_empty_within_set_is_identity(rng):
    data = make_id_dataset(rng, n=40, p=2)
    bmat = evaluate_basis(data, identity_spec(2))
    prof = target_profile_from_means([0.0, 0.0])
    out_b, out_p = augment_within_study(bmat, data, prof)
    assert out_b is bmat and out_p is prof


def test_within_columns_zero_per_study_deviation(rng):
    data = make_id_dataset(rng, n=120, p=2, m=3)
    spec = identity_spec(2, within=(2,), standardize=False)
    bmat = evaluate_basis(data, spec)
    prof = target_profile_from_means([0.3, 0.0])
    aug_b, aug_p = augment_within_study(bmat, data, prof)
    # one extra column per (study, within-term) pair, all targeting 0
    assert aug_b.values.shape[1] == bmat.values.shape[1] + data.m
    assert np.all(aug_p.basis_targets[bmat.k:] == 0.0)
    for i in range(1, data.m + 1):
        col = aug_b.values[:, bmat.k + i - 1]
        mask = data.study == i
        assert np.allclose(col[~mask], 0.0)
        assert np.allclose(col[mask],
                           bmat.values[mask, 1] - prof.basis_targets[1])


def test_basis_target_means_drops_constant():
    spec = build_basis_spec(["identity:1", "square:1"], p=1,
                            standardize=False)
    means = basis_target_means(np.array([[1.0], [3.0]]), spec)
    assert means.tolist() == [2.0, 5.0]
