"""Basis-function system: construction, evaluation, and within-study
interaction augmentation.

A basis spec is an ordered list of terms (constant, identity, square,
pairwise interaction) over the p covariates, partitioned into an
across-study set A and a within-study set W. Evaluation produces an
n x K matrix whose first column is all ones; optional standardization
affinely rescales columns 2..K and records the transform so the same
constants can be applied to a target vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange
from .model import IdDataset, TargetProfile


@dataclass(frozen=True)
class Term:
    """One basis function: kind plus 1-based covariate indices."""

    kind: str            # CONSTANT | IDENTITY | SQUARE | INTERACTION
    i: int = 0
    j: int = 0

    def label(self) -> str:
        if self.kind == "CONSTANT":
            return "1"
        if self.kind == "IDENTITY":
            return f"x{self.i}"
        if self.kind == "SQUARE":
            return f"x{self.i}^2"
        return f"x{self.i}*x{self.j}"


@dataclass(frozen=True)
class BasisSpec:
    terms: tuple                 # Term, terms[0] is CONSTANT
    across_set: frozenset        # 1-based indices into terms
    within_set: frozenset
    standardize: bool = True

    def __post_init__(self):
        if not self.terms or self.terms[0].kind != "CONSTANT":
            raise ValueError("term 1 must be CONSTANT")
        k = len(self.terms)
        full = set(range(1, k + 1))
        if set(self.across_set) | set(self.within_set) != full or \
                set(self.across_set) & set(self.within_set):
            raise ValueError("A and W must partition 1..K")
        if 1 not in self.across_set:
            raise ValueError("CONSTANT must belong to A")

    @property
    def k(self) -> int:
        return len(self.terms)

    def labels(self) -> list:
        return [t.label() for t in self.terms]

    def to_config(self) -> dict:
        return {
            "terms": [self._term_str(t) for t in self.terms],
            "within": sorted(self.within_set),
            "standardize": self.standardize,
        }

    @staticmethod
    def _term_str(t: Term) -> str:
        if t.kind == "CONSTANT":
            return "constant"
        if t.kind == "IDENTITY":
            return f"identity:{t.i}"
        if t.kind == "SQUARE":
            return f"square:{t.i}"
        return f"interaction:{t.i},{t.j}"


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray           # n_rows x K
    spec: BasisSpec
    scaling: tuple               # per column (center, scale); (0,1) if raw

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def k(self) -> int:
        return self.values.shape[1]


def _parse_term(item, p: int) -> Term:
    if isinstance(item, Term):
        t = item
    elif isinstance(item, str):
        s = item.strip().lower()
        if s in ("constant", "1"):
            t = Term("CONSTANT")
        elif s.startswith("identity:"):
            t = Term("IDENTITY", i=int(s.split(":")[1]))
        elif s.startswith("square:"):
            t = Term("SQUARE", i=int(s.split(":")[1]))
        elif s.startswith("interaction:"):
            a, b = s.split(":")[1].split(",")
            t = Term("INTERACTION", i=int(a), j=int(b))
        else:
            raise ValueError(f"unknown term {item!r}")
    elif isinstance(item, (tuple, list)):
        kind = str(item[0]).upper()
        idx = [int(v) for v in item[1:]]
        t = Term(kind, *(idx + [0] * (2 - len(idx))))
    else:
        raise ValueError(f"unknown term {item!r}")
    for idx in (t.i, t.j):
        if idx and not 1 <= idx <= p:
            raise IndexOutOfRange(f"covariate index {idx} exceeds p={p}")
    return t


def build_basis_spec(config: Sequence, p: int, within: Sequence = (),
                     standardize: bool = True) -> BasisSpec:
    """Build a BasisSpec from term descriptors.

    Descriptors may be Term objects, tuples like ("SQUARE", 2), or strings
    like "identity:1", "square:2", "interaction:1,2". A CONSTANT term is
    prepended when absent. `within` lists 1-based term positions (after
    prepending) assigned to the within-study set W; everything else is
    across-study.
    """
    terms = [_parse_term(item, p) for item in config]
    if not terms or terms[0].kind != "CONSTANT":
        terms = [Term("CONSTANT")] + [t for t in terms if t.kind != "CONSTANT"]
    k = len(terms)
    w = frozenset(int(v) for v in within)
    if any(v < 1 or v > k for v in w):
        raise IndexOutOfRange(f"within indices must lie in 1..{k}")
    if 1 in w:
        raise ValueError("CONSTANT cannot be within-study")
    return BasisSpec(
        terms=tuple(terms),
        across_set=frozenset(range(1, k + 1)) - w,
        within_set=w,
        standardize=standardize,
    )


def identity_spec(p: int, squares: bool = False, within: Sequence = (),
                  standardize: bool = True) -> BasisSpec:
    """Convenience: constant + all covariates (+ optional squares)."""
    terms = [("IDENTITY", j) for j in range(1, p + 1)]
    if squares:
        terms += [("SQUARE", j) for j in range(1, p + 1)]
    return build_basis_spec(terms, p, within=within, standardize=standardize)


def _raw_columns(x: np.ndarray, spec: BasisSpec) -> np.ndarray:
    n = x.shape[0]
    cols = np.empty((n, spec.k))
    for c, t in enumerate(spec.terms):
        if t.kind == "CONSTANT":
            cols[:, c] = 1.0
        elif t.kind == "IDENTITY":
            cols[:, c] = x[:, t.i - 1]
        elif t.kind == "SQUARE":
            cols[:, c] = x[:, t.i - 1] ** 2
        elif t.kind == "INTERACTION":
            cols[:, c] = x[:, t.i - 1] * x[:, t.j - 1]
        else:
            raise ValueError(f"unknown term kind {t.kind!r}")
    return cols


def evaluate_basis(data, spec: BasisSpec,
                   scaling: Optional[tuple] = None) -> BasisMatrix:
    """Evaluate the basis on an IdDataset or a raw (n, p) array.

    With spec.standardize, columns 2..K are centered and scaled by their
    sample moments (ddof=1); pass `scaling` to reuse a previously recorded
    transform instead (e.g. to evaluate target rows on the study scale).
    """
    x = data.x if isinstance(data, IdDataset) else np.asarray(data, dtype=float)
    max_idx = max([t.i for t in spec.terms] + [t.j for t in spec.terms])
    if max_idx > x.shape[1]:
        raise DimensionMismatch(
            f"spec needs {max_idx} covariates, data has {x.shape[1]}")
    cols = _raw_columns(x, spec)

    if scaling is not None:
        pairs = scaling
        for c, (center, scale) in enumerate(pairs):
            if c == 0:
                continue
            cols[:, c] = (cols[:, c] - center) / scale
    elif spec.standardize:
        pairs = [(0.0, 1.0)]
        for c in range(1, spec.k):
            center = float(cols[:, c].mean())
            sd = float(cols[:, c].std(ddof=1)) if cols.shape[0] > 1 else 0.0
            scale = sd if sd > 0 else 1.0
            cols[:, c] = (cols[:, c] - center) / scale
            pairs.append((center, scale))
    else:
        pairs = [(0.0, 1.0)] * spec.k
    return BasisMatrix(values=cols, spec=spec, scaling=tuple(pairs))


def scale_profile(profile: TargetProfile, basis: BasisMatrix) -> TargetProfile:
    """Map a raw-scale target profile onto the basis matrix scale.

    Tolerances are taken as already expressed on the working scale and
    pass through unchanged.
    """
    if profile.k != basis.k:
        raise DimensionMismatch(
            f"profile length {profile.k} vs basis K {basis.k}")
    targets = profile.basis_targets.copy()
    for c, (center, scale) in enumerate(basis.scaling):
        if c == 0:
            continue
        targets[c] = (targets[c] - center) / scale
    return TargetProfile(
        basis_targets=targets,
        tolerances=profile.tolerances.copy(),
        n_star=profile.n_star,
        alpha=profile.alpha,
    )


def basis_target_means(x_rows: np.ndarray, spec: BasisSpec):
    """Raw-scale basis means over target covariate rows (without the
    leading constant)."""
    cols = _raw_columns(np.asarray(x_rows, dtype=float), spec)
    return cols.mean(axis=0)[1:]


def augment_within_study(basis: BasisMatrix, data: IdDataset,
                         profile: TargetProfile):
    """Append, per study i and per within term k, the column
    1{G=i} * (B_k(x) - B*_k), with target 0 and tolerance delta_k.

    At delta=0 this forces each study's weighted basis deviation to
    vanish. W empty returns the inputs unchanged.
    """
    spec = basis.spec
    if not spec.within_set:
        return basis, profile
    if basis.values.shape[0] != data.n:
        raise DimensionMismatch("basis rows do not match dataset rows")

    w_idx = sorted(spec.within_set)
    new_cols, new_targets, new_tols = [], [], []
    for i in range(1, data.m + 1):
        in_study = (data.study == i).astype(float)
        for k in w_idx:
            dev = basis.values[:, k - 1] - profile.basis_targets[k - 1]
            new_cols.append(in_study * dev)
            new_targets.append(0.0)
            new_tols.append(float(profile.tolerances[k - 1]))

    values = np.column_stack([basis.values] + new_cols)
    scaling = basis.scaling + tuple((0.0, 1.0) for _ in new_cols)
    aug_basis = BasisMatrix(values=values, spec=spec, scaling=scaling)
    aug_profile = TargetProfile(
        basis_targets=np.concatenate([profile.basis_targets, new_targets]),
        tolerances=np.concatenate([profile.tolerances, new_tols]),
        n_star=profile.n_star,
        alpha=profile.alpha,
    )
    return aug_basis, aug_profile
