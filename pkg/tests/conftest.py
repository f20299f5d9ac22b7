"""Shared fixtures and dataset builders for the test suite."""

import numpy as np
import pytest

from metabalance.model import IdDataset, validate_id_dataset


def make_id_dataset(rng, n=80, p=2, m=2, effect=2.0):
    """Random multi-study dataset with a linear outcome model."""
    study = rng.integers(1, m + 1, size=n)
    # make sure every study has both arms
    z = rng.integers(0, 2, size=n)
    for i in range(1, m + 1):
        idx = np.flatnonzero(study == i)
        if len(idx) < 4:
            study[rng.choice(n, 4, replace=False)] = i
            idx = np.flatnonzero(study == i)
        z[idx[0]] = 1
        z[idx[1]] = 0
    x = rng.standard_normal((n, p))
    y = (1.0 + x @ rng.uniform(-1, 1, p) + effect * z
         + 0.5 * z * x[:, 0] + 0.3 * rng.standard_normal(n))
    rows = []
    for i in range(n):
        row = {"study_id": int(study[i]), "z": int(z[i]), "y": float(y[i])}
        for j in range(p):
            row[f"x{j + 1}"] = float(x[i, j])
        rows.append(row)
    return validate_id_dataset(rows)


def single_study_dataset(x_treated, y_treated, x_control, y_control):
    """One-study, one-covariate dataset from explicit arm values."""
    rows = []
    for xv, yv in zip(x_treated, y_treated):
        rows.append({"study_id": 1, "z": 1, "y": float(yv),
                     "x1": float(xv)})
    for xv, yv in zip(x_control, y_control):
        rows.append({"study_id": 1, "z": 0, "y": float(yv),
                     "x1": float(xv)})
    return validate_id_dataset(rows)


@pytest.fixture
def rng():
    return np.random.default_rng(20260824)


@pytest.fixture
def small_data(rng):
    return make_id_dataset(rng, n=120, p=2, m=2)
