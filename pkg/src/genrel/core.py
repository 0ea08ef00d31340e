"""Shared domain types, link functions and study validation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Scenario(str, enum.Enum):
    INDEPENDENT = "independent"
    OVERLAPPED = "overlapped"


class LinkKind(str, enum.Enum):
    LOGISTIC = "logistic"
    IDENTITY = "identity"


class TargetFunctional(str, enum.Enum):
    COVARIANCE = "covariance"
    VARIANCE_Y = "variance_y"
    VARIANCE_W = "variance_w"
    CORRELATION = "correlation"


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class PairedStudy:
    """Two-trait design.

    Rows ``0..m-1`` of ``Z`` are the same individuals as rows ``0..m-1`` of
    ``X`` when the scenario is overlapped. Construction does not enforce the
    invariants; call :func:`validate_study` for that.
    """

    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    m: int = 0
    scenario: Scenario = Scenario.INDEPENDENT

    def __post_init__(self):
        for name in ("X", "y", "Z", "w"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "scenario", Scenario(self.scenario))

    @property
    def n1(self) -> int:
        return self.X.shape[0]

    @property
    def n2(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def overlap(self) -> int:
        """Number of shared rows actually used by the estimators."""
        return self.m if self.scenario is Scenario.OVERLAPPED else 0

    @property
    def effective_n(self) -> int:
        return self.n1 + self.n2 - self.overlap

    def distinct_rows(self) -> np.ndarray:
        """Covariate rows of every distinct individual, overlap counted once."""
        return np.vstack([self.X, self.Z[self.overlap:]])

    def with_covariates(self, X, Z) -> "PairedStudy":
        return PairedStudy(X, self.y, Z, self.w, self.m, self.scenario)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    rows: tuple = ()
    columns: tuple = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __bool__(self):
        # truthy when there is something wrong, like a non-empty list
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def expit(eta):
    """Logistic function, overflow-safe for scalars and arrays.

    Raises
    ------
    ValueError
        If any input is NaN or infinite.
    """
    arr = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("expit requires finite input")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def link_mean(eta, link: LinkKind):
    """Mean function h: expit for the logistic link, identity otherwise."""
    if LinkKind(link) is LinkKind.LOGISTIC:
        return expit(eta)
    return np.asarray(eta, dtype=float)


def _binary_violations(v, name):
    bad = np.flatnonzero(~np.isin(v, (0.0, 1.0)))
    if bad.size:
        return [Violation("non_binary_response",
                          f"{name} has non-binary entries at rows {bad.tolist()}",
                          rows=tuple(int(i) for i in bad))]
    return []


def validate_study(study: PairedStudy) -> ValidationReport:
    """Check every PairedStudy invariant.

    Returns a report whose ``violations`` list is empty for a valid study.
    ``diagnostics`` always carries the marginal case fractions, which are the
    observable side of the balanced-case-probability assumption.
    """
    out = []
    X, Z, y, w = study.X, study.Z, study.y, study.w
    if X.ndim != 2 or Z.ndim != 2:
        out.append(Violation("shape", "X and Z must be two-dimensional"))
        return ValidationReport(out, {})
    if X.shape[1] != Z.shape[1]:
        out.append(Violation("column_mismatch",
                             f"X has {X.shape[1]} columns, Z has {Z.shape[1]}"))
    if X.shape[1] < 1:
        out.append(Violation("no_columns", "designs need at least one column"))
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        out.append(Violation("length_mismatch",
                             f"y has length {y.shape[0]}, X has {X.shape[0]} rows"))
    if w.ndim != 1 or w.shape[0] != Z.shape[0]:
        out.append(Violation("length_mismatch",
                             f"w has length {w.shape[0]}, Z has {Z.shape[0]} rows"))
    for name, arr in (("X", X), ("Z", Z)):
        bad_r, bad_c = np.nonzero(~np.isfinite(arr))
        if bad_r.size:
            out.append(Violation("non_finite", f"{name} has non-finite entries",
                                 rows=tuple(int(i) for i in bad_r),
                                 columns=tuple(int(j) for j in bad_c)))
    out += _binary_violations(y, "y")
    out += _binary_violations(w, "w")

    m = study.m
    if study.scenario is Scenario.INDEPENDENT:
        if m != 0:
            out.append(Violation("overlap", f"independent scenario requires m=0, got m={m}"))
    else:
        n_min = min(X.shape[0], Z.shape[0])
        if not 1 <= m <= n_min:
            out.append(Violation("overlap", f"overlapped scenario requires 1 <= m <= {n_min}, got m={m}"))
        elif X.shape[1] == Z.shape[1]:
            differs = np.flatnonzero(np.any(X[:m] != Z[:m], axis=1))
            if differs.size:
                out.append(Violation("overlap",
                                     f"shared rows differ between X and Z at rows {differs.tolist()}",
                                     rows=tuple(int(i) for i in differs)))

    diagnostics = {
        "mean_y": float(np.mean(y)) if y.size else math.nan,
        "mean_w": float(np.mean(w)) if w.size else math.nan,
        "n1": int(X.shape[0]),
        "n2": int(Z.shape[0]),
        "p": int(X.shape[1]),
    }
    return ValidationReport(out, diagnostics)


def center_columns(M, means=None):
    """Subtract column means.

    Parameters
    ----------
    M : (n, p) array or sequence of arrays
        When a sequence is given, the pooled mean over all of them is used and a
        list of centered matrices is returned.
    means : (p,) array, optional
        Means to subtract. Defaults to the (pooled) empirical column means.

    Returns
    -------
    centered, means
    """
    pooled = isinstance(M, (list, tuple))
    mats = [np.asarray(a, dtype=float) for a in (M if pooled else [M])]
    if any(a.size == 0 for a in mats):
        raise ShapeError("cannot center an empty matrix")
    p = mats[0].shape[1]
    if any(a.shape[1] != p for a in mats):
        raise ShapeError("matrices differ in column count")
    if means is None:
        means = np.vstack(mats).mean(axis=0)
    else:
        means = np.asarray(means, dtype=float)
        if means.shape != (p,):
            raise ShapeError(f"means has shape {means.shape}, expected ({p},)")
    centered = [a - means for a in mats]
    return (centered if pooled else centered[0]), means


def center_study(study: PairedStudy, means=None):
    """Center X and Z with the pooled mean over distinct individuals."""
    if means is None:
        _, means = center_columns(study.distinct_rows())
    (Xc, Zc), means = center_columns([study.X, study.Z], means)
    return study.with_covariates(Xc, Zc), means
