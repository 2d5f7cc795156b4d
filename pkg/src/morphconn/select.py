"""Two-sample t-test feature screening.

The t-distribution tail is evaluated through the regularized incomplete beta
function in :mod:`morphconn.kernels`; no statistics library is involved.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import errors, kernels
from .features import FeatureDescriptor, FeatureMatrix

SCOPES = ("train_only", "full_cohort")


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this

    descriptor: FeatureDescriptor
    t: float
    df: float
    p: float
    selected: bool


@dataclass(frozen=True)
class SelectionResult:
    alpha: float
    scope: str
    results: tuple[TestResult, ...]
    pooled: bool = False

    @property
    def selected_count(self) -> int:
        return sum(r.selected for r in self.results)

    @property
    def mask(self) -> np.ndarray:
        return np.array([r.selected for r in self.results], dtype=bool)

    @property
    def selected_descriptors(self) -> list[FeatureDescriptor]:
        return [r.descriptor for r in self.results if r.selected]


def t_two_sided_p(t, df):
    """Two-sided p-value of Student's t, vectorized.

    ``p = I_x(df/2, 1/2)`` with ``x = df / (df + t^2)``; infinite ``|t|`` and
    underflow clamp to the smallest positive double.
    """
    t = np.asarray(t, dtype=float)
    df = np.asarray(df, dtype=float)
    if np.isnan(t).any() or not np.isfinite(df).all():
        raise errors.NonFiniteValue("t and df must be finite")
    if (df <= 0).any():
        raise ValueError("df must be positive")
    t, df = np.broadcast_arrays(t, df)
    t2 = t * t
    with np.errstate(over="ignore", invalid="ignore"):
        denom = df + t2
        x = np.where(np.isinf(t2), 0.0, df / denom)
        xc = np.where(np.isinf(t2), 1.0, t2 / denom)
    p = kernels.betainc(df / 2.0, 0.5, x, xc)
    p = np.where(t2 == 0, 1.0, p)
    p = np.clip(p, kernels.TINY, 1.0)
    return float(p) if p.ndim == 0 else p


def _welch_moments(a, b, pooled=False):
    """t and df for each column of ``a`` (n_a, k) versus ``b`` (n_b, k)."""
    na, nb = a.shape[0], b.shape[0]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
    diff = ma - mb
    if pooled:
        sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se2 = sp2 * (1.0 / na + 1.0 / nb)
        df = np.full(diff.shape, float(na + nb - 2))
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        with np.errstate(divide="ignore", invalid="ignore"):
            df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
        # the equal-variance, equal-size case reduces to the pooled df exactly
        df = np.where((qa == qb) & (na == nb), float(na + nb - 2), df)
    zero = se2 == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / np.sqrt(se2)
    t = np.where(zero & (diff == 0), 0.0, t)
    t = np.where(zero & (diff != 0), np.copysign(np.inf, diff), t)
    df = np.where(zero, float(na + nb - 2), df)
    return t, df


def welch_t(a, b, pooled=False) -> tuple[float, float]:
    a = np.asarray(a, dtype=float).reshape(-1, 1)
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise errors.GroupTooSmall("each sample needs at least 2 observations")
    t, df = _welch_moments(a, b, pooled)
    return float(t[0]), float(df[0])


def column_tests(values, labels, pooled=False):
    """(t, df, p) arrays for every column, ASD (label 1) minus TD (label 0)."""
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    a, b = values[labels == 1], values[labels == 0]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise errors.GroupTooSmall(
            f"need >= 2 subjects per group, got ASD={a.shape[0]} TD={b.shape[0]}")
    t, df = _welch_moments(a, b, pooled)
    return t, df, t_two_sided_p(t, df)


def select_features(matrix: FeatureMatrix, labels, alpha: float = 0.05,
                    scope: str = "train_only", subject_ids=None,
                    pooled: bool = False) -> SelectionResult:
    """Test every column and keep those with ``p < alpha``.

    ``subject_ids`` restricts the tests to a subset of rows (the training
    split in ``train_only`` scope); ``labels`` aligns with those rows.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    values = matrix.values if subject_ids is None else matrix.rows(subject_ids)
    t, df, p = column_tests(values, labels, pooled)
    results = tuple(
        TestResult(d, float(ti), float(dfi), float(pi), bool(pi < alpha))
        for d, ti, dfi, pi in zip(matrix.descriptors, t, df, np.atleast_1d(p))
    )
    return SelectionResult(alpha, scope, results, pooled)


def write_selection_csv(sel: SelectionResult, atlas, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["descriptor", "t", "df", "p", "selected"])
        for r in sel.results:
            w.writerow([r.descriptor.name(atlas), f"{r.t:.17g}", f"{r.df:.17g}",
                        f"{r.p:.17g}", int(r.selected)])


def read_selection_csv(path, matrix: FeatureMatrix, alpha=0.05, scope="train_only") -> SelectionResult:
    by_name = dict(zip(matrix.names(), matrix.descriptors))
    results = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            d = by_name.get(row["descriptor"])
            if d is None:
                raise errors.ColumnMismatch(f"{path}: unknown descriptor {row['descriptor']!r}")
            results.append(TestResult(d, float(row["t"]), float(row["df"]), float(row["p"]),
                                      row["selected"].strip() in {"1", "true", "True"}))
    order = {d: k for k, d in enumerate(matrix.descriptors)}
    results.sort(key=lambda r: order[r.descriptor])
    return SelectionResult(alpha, scope, tuple(results))

