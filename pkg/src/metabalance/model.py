"""Domain types, dataset validation, and target-profile construction.

Individual-level (ID) data are tabular rows with a study id, a binary
treatment, p covariates and an optional outcome. Aggregate-level (AD) data
are one row per study with an effect estimate, its variance, a sample size
and study-mean basis values. A target profile is the vector of target
basis means with per-entry imbalance tolerances.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateStudyId,
    EmptyStudy,
    MissingCovariate,
    NonBinaryTreatment,
    NonPositiveVariance,
)


@dataclass(frozen=True)
class IndividualRecord:
    """One unit: (study, treatment, covariates, outcome)."""

    study_id: int
    treatment: int
    covariates: tuple
    outcome: Optional[float] = None


@dataclass(frozen=True)
class IdDataset:
    """Canonical individual-level dataset.

    Study ids are remapped to 1..m in first-appearance order; the original
    labels are kept for reporting. Arrays are read-only after validation.
    """

    study: np.ndarray          # int, values in 1..m
    z: np.ndarray              # int, {0,1}
    x: np.ndarray              # (n, p) float
    y: Optional[np.ndarray]    # (n,) float or None when outcomes absent
    covariate_names: tuple
    original_labels: tuple     # original label of study i at index i-1

    def __post_init__(self):
        for arr in (self.study, self.z, self.x, self.y):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.study.shape[0]

    @property
    def m(self) -> int:
        return int(self.study.max()) if self.n else 0

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def study_sizes(self) -> np.ndarray:
        return np.bincount(self.study, minlength=self.m + 1)[1:]

    def arm_counts(self) -> list:
        """Per study: (n_i, treated, control)."""
        out = []
        for i in range(1, self.m + 1):
            mask = self.study == i
            out.append((int(mask.sum()), int(self.z[mask].sum()),
                        int((1 - self.z[mask]).sum())))
        return out

    def subset(self, mask: np.ndarray) -> "IdDataset":
        """Row subset; study ids are kept as-is (not re-canonicalized)."""
        return IdDataset(
            study=self.study[mask].copy(),
            z=self.z[mask].copy(),
            x=self.x[mask].copy(),
            y=None if self.y is None else self.y[mask].copy(),
            covariate_names=self.covariate_names,
            original_labels=self.original_labels,
        )

    def records(self) -> list:
        y = self.y
        return [
            IndividualRecord(int(self.study[i]), int(self.z[i]),
                             tuple(self.x[i]),
                             None if y is None or math.isnan(y[i]) else float(y[i]))
            for i in range(self.n)
        ]


@dataclass(frozen=True)
class AdStudyRow:
    """Aggregate summary for one study."""

    study_id: int
    tau_hat: float
    sigma2_hat: float
    n_i: int
    basis_means: np.ndarray
    scale_c: float

    def __post_init__(self):
        self.basis_means.setflags(write=False)


@dataclass(frozen=True)
class AdDataset:
    rows: tuple

    @property
    def m(self) -> int:
        return len(self.rows)

    def tau(self) -> np.ndarray:
        return np.array([r.tau_hat for r in self.rows])

    def sigma2(self) -> np.ndarray:
        return np.array([r.sigma2_hat for r in self.rows])

    def scales(self) -> np.ndarray:
        return np.array([r.scale_c for r in self.rows])

    def basis_matrix(self) -> np.ndarray:
        return np.vstack([r.basis_means for r in self.rows])


@dataclass(frozen=True)
class TargetProfile:
    """Target basis means B* with per-entry tolerances.

    Entry 0 is the normalization row: target 1, tolerance 0.
    """

    basis_targets: np.ndarray
    tolerances: np.ndarray
    n_star: Optional[int] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        self.basis_targets.setflags(write=False)
        self.tolerances.setflags(write=False)
        if self.basis_targets.shape != self.tolerances.shape:
            raise DimensionMismatch("targets and tolerances differ in length")
        if np.any(self.tolerances < 0):
            raise ValueError("tolerances must be non-negative")
        if self.basis_targets[0] != 1.0 or self.tolerances[0] != 0.0:
            raise ValueError("entry 0 must be the normalization row (1, 0)")

    @property
    def k(self) -> int:
        return self.basis_targets.shape[0]

    def to_json(self) -> str:
        obj = {
            "basis_targets": list(self.basis_targets),
            "tolerances": list(self.tolerances),
            "n_star": self.n_star,
            "alpha": self.alpha,
        }
        return json.dumps(obj, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TargetProfile":
        obj = json.loads(text)
        return TargetProfile(
            basis_targets=np.asarray(obj["basis_targets"], dtype=float),
            tolerances=np.asarray(obj["tolerances"], dtype=float),
            n_star=obj.get("n_star"),
            alpha=obj.get("alpha"),
        )


@dataclass
class EstimateReport:
    """Point estimate plus optional variance estimates and CI."""

    tau_hat: float
    method_tag: str
    variance_heuristic: Optional[float] = None
    variance_plugin: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    ci_level: Optional[float] = None
    ci_scaling: Optional[str] = None
    diagnostics_ref: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "tau_hat": self.tau_hat,
            "method_tag": self.method_tag,
            "variance_heuristic": self.variance_heuristic,
            "variance_plugin": self.variance_plugin,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "ci_level": self.ci_level,
            "ci_scaling": self.ci_scaling,
            "diagnostics_ref": self.diagnostics_ref,
            "extra": self.extra,
        }
        return json.dumps(obj, sort_keys=True)


METHOD_TAGS = (
    "ID_BOUNDED", "ID_UNBOUNDED", "ONE_STAGE_OLS", "TWO_STAGE",
    "AD_BOUNDED", "AD_UNBOUNDED", "G_FORMULA", "IPW", "AUGMENTED",
    "CLASSICAL_TWO_STAGE",
)


def _as_float(value, what, row_idx):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise MissingCovariate(f"row {row_idx}: bad value for {what!r}")
    if not math.isfinite(v):
        raise MissingCovariate(f"row {row_idx}: non-finite {what!r}")
    return v


def validate_id_dataset(raw) -> IdDataset:
    """Validate tabular rows into a canonical IdDataset.

    `raw` is a sequence of mappings with keys `study_id`, `z`, optional `y`,
    and covariate columns (everything else, in first-row order). Passing an
    IdDataset re-validates it (idempotent).
    """
    if isinstance(raw, IdDataset):
        rows = []
        for i in range(raw.n):
            row = {"study_id": raw.original_labels[raw.study[i] - 1],
                   "z": int(raw.z[i])}
            if raw.y is not None:
                row["y"] = raw.y[i]
            for j, name in enumerate(raw.covariate_names):
                row[name] = raw.x[i, j]
            rows.append(row)
        raw = rows

    raw = list(raw)
    if not raw:
        raise EmptyStudy("no rows")

    cov_names = [k for k in raw[0].keys() if k not in ("study_id", "z", "y")]
    has_outcome = "y" in raw[0] and raw[0]["y"] not in (None, "")

    labels: list = []
    label_to_id: dict = {}
    study, z, x, y = [], [], [], []
    for idx, row in enumerate(raw):
        label = row.get("study_id")
        if label is None or label == "":
            raise EmptyStudy(f"row {idx}: missing study id")
        if label not in label_to_id:
            label_to_id[label] = len(labels) + 1
            labels.append(label)
        study.append(label_to_id[label])

        zv = row.get("z")
        try:
            zv = int(float(zv))
        except (TypeError, ValueError):
            raise NonBinaryTreatment(f"row {idx}: treatment {row.get('z')!r}")
        if zv not in (0, 1) or float(row.get("z")) not in (0.0, 1.0):
            raise NonBinaryTreatment(f"row {idx}: treatment {row.get('z')!r}")
        z.append(zv)

        xs = []
        for name in cov_names:
            if name not in row or row[name] in (None, ""):
                raise MissingCovariate(f"row {idx}: column {name!r}")
            xs.append(_as_float(row[name], name, idx))
        x.append(xs)

        if has_outcome:
            yv = row.get("y")
            y.append(float("nan") if yv in (None, "") else float(yv))

    return IdDataset(
        study=np.asarray(study, dtype=int),
        z=np.asarray(z, dtype=int),
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float) if has_outcome else None,
        covariate_names=tuple(cov_names),
        original_labels=tuple(labels),
    )


def validate_ad_dataset(raw, scale: str = "sigma2") -> AdDataset:
    """Validate aggregate rows into an AdDataset.

    `raw` rows carry `study_id`, `tau_hat`, `sigma2_hat`, `n`, and basis
    mean columns (everything else). `scale` picks the dispersion scaling
    c_i: the study variance estimate (default) or 1/n_i.
    """
    raw = list(raw)
    if not raw:
        raise EmptyStudy("no rows")
    if scale not in ("sigma2", "inv_n"):
        raise ValueError(f"unknown scale {scale!r}")

    basis_cols = [k for k in raw[0].keys()
                  if k not in ("study_id", "tau_hat", "sigma2_hat", "n")]
    seen = set()
    rows = []
    for idx, row in enumerate(raw):
        sid = row["study_id"]
        if sid in seen:
            raise DuplicateStudyId(f"study id {sid!r} repeated")
        seen.add(sid)
        sigma2 = float(row["sigma2_hat"])
        if not sigma2 > 0:
            raise NonPositiveVariance(f"row {idx}: sigma2_hat={sigma2}")
        n_i = int(float(row["n"]))
        c = sigma2 if scale == "sigma2" else 1.0 / n_i
        rows.append(AdStudyRow(
            study_id=int(float(sid)) if str(sid).replace(".", "").lstrip("-").isdigit() else idx + 1,
            tau_hat=float(row["tau_hat"]),
            sigma2_hat=sigma2,
            n_i=n_i,
            basis_means=np.array([_as_float(row[c_], c_, idx) for c_ in basis_cols]),
            scale_c=c,
        ))
    return AdDataset(rows=tuple(rows))


def target_profile_from_means(means, tolerances=None, n_star=None,
                              alpha=None) -> TargetProfile:
    """Build a TargetProfile from basis means, prepending the (1, 0) row."""
    means = np.asarray(means, dtype=float)
    if tolerances is None:
        tolerances = np.zeros_like(means)
    else:
        tolerances = np.asarray(tolerances, dtype=float)
        if np.isscalar(tolerances) or tolerances.ndim == 0:
            tolerances = np.full_like(means, float(tolerances))
    if means.shape != tolerances.shape:
        raise DimensionMismatch(
            f"means length {means.shape} vs tolerances {tolerances.shape}")
    return TargetProfile(
        basis_targets=np.concatenate(([1.0], means)),
        tolerances=np.concatenate(([0.0], tolerances)),
        n_star=n_star,
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------

def read_id_csv(path) -> IdDataset:
    """Read `study_id,z,y,x1,...,xp` (header required)."""
    with open(path, newline="") as fh:
        return validate_id_dataset(csv.DictReader(fh))


def write_id_csv(data: IdDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["study_id", "z"]
        if data.y is not None:
            header.append("y")
        header.extend(data.covariate_names)
        writer.writerow(header)
        for i in range(data.n):
            row = [data.original_labels[data.study[i] - 1], data.z[i]]
            if data.y is not None:
                row.append(repr(float(data.y[i])))
            row.extend(repr(float(v)) for v in data.x[i])
            writer.writerow(row)


def read_ad_csv(path, scale: str = "sigma2") -> AdDataset:
    """Read `study_id,tau_hat,sigma2_hat,n,b1,...,bK` (header required)."""
    with open(path, newline="") as fh:
        return validate_ad_dataset(csv.DictReader(fh), scale=scale)


def write_ad_csv(data: AdDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        k = data.rows[0].basis_means.shape[0]
        writer.writerow(["study_id", "tau_hat", "sigma2_hat", "n"]
                        + [f"b{j + 1}" for j in range(k)])
        for r in data.rows:
            writer.writerow([r.study_id, repr(r.tau_hat), repr(r.sigma2_hat),
                             r.n_i] + [repr(float(v)) for v in r.basis_means])
