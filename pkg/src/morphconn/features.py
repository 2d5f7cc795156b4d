"""Standardization and construction of MF and MCF feature matrices.

MF columns are the z-scored regional measures themselves, region-major and
measure-minor. MCF columns are Euclidean distances between the z-scored
4-measure profiles of two regions, one per unordered pair ``i < j`` in
lexicographic order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import errors, kernels
from .atlas import MEASURES, Atlas, CohortDataset

FIT_SCOPES = ("train_only", "full_cohort")
KINDS = ("MF", "MCF")


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    mean: np.ndarray  # (R, 4)
    sd: np.ndarray  # (R, 4)
    fit_scope: str = "train_only"

    @property
    def constant(self) -> np.ndarray:
        return self.sd == 0


@dataclass(frozen=True, order=True)
class FeatureDescriptor:
    kind: str
    i: int
    j: int  # measure index for MF, second region for MCF

    def name(self, atlas: Atlas) -> str:
        if self.kind == "MF":
            return f"MF:{atlas.regions[self.i].name}__{MEASURES[self.j]}"
        return f"MCF:{atlas.regions[self.i].name}__{atlas.regions[self.j].name}"

    @property
    def regions(self) -> tuple[int, ...]:
        return (self.i,) if self.kind == "MF" else (self.i, self.j)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    kind: str
    subject_ids: tuple[str, ...]
    descriptors: tuple[FeatureDescriptor, ...]
    values: np.ndarray
    atlas: Atlas
    params: StandardizationParams | None = None

    @property
    def n_features(self) -> int:
        return len(self.descriptors)

    def names(self) -> list[str]:
        return [d.name(self.atlas) for d in self.descriptors]

    def rows(self, subject_ids) -> np.ndarray:
        pos = {s: k for k, s in enumerate(self.subject_ids)}
        return self.values[[pos[s] for s in subject_ids]]

    def columns(self, keep) -> "FeatureMatrix":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return FeatureMatrix(self.kind, self.subject_ids,
                             tuple(self.descriptors[k] for k in keep),
                             self.values[:, keep], self.atlas, self.params)


def fit_standardizer(dataset: CohortDataset, subject_mask=None,
                     fit_scope: str = "train_only") -> StandardizationParams:
    """Column means and sample SDs over the masked subjects."""
    x = dataset.tensor()
    if subject_mask is not None:
        x = x[np.asarray(subject_mask, dtype=bool)]
    if x.shape[0] == 0:
        raise errors.InsufficientSubjects("empty subject mask")
    if x.shape[0] < 2:
        raise errors.InsufficientSubjects("need at least 2 subjects to estimate an SD")
    if fit_scope not in FIT_SCOPES:
        raise ValueError(f"fit_scope must be one of {FIT_SCOPES}")
    return StandardizationParams(x.mean(axis=0), x.std(axis=0, ddof=1), fit_scope)


def apply_standardizer(params: StandardizationParams, data) -> np.ndarray:
    """Z-score a dataset (or raw ``(N, R, 4)`` tensor); constant columns give 0."""
    x = data.tensor() if isinstance(data, CohortDataset) else np.asarray(data, dtype=float)
    if x.shape[1:] != params.mean.shape:
        raise errors.ShapeMismatch(f"tensor {x.shape[1:]} vs params {params.mean.shape}")
    safe_sd = np.where(params.constant, 1.0, params.sd)
    z = (x - params.mean) / safe_sd
    return np.where(params.constant, 0.0, z)


def mf_descriptors(n_regions: int) -> tuple[FeatureDescriptor, ...]:
    return tuple(FeatureDescriptor("MF", r, m) for r in range(n_regions)
                 for m in range(len(MEASURES)))


def mcf_descriptors(n_regions: int) -> tuple[FeatureDescriptor, ...]:
    return tuple(FeatureDescriptor("MCF", i, j) for i in range(n_regions)
                 for j in range(i + 1, n_regions))


def _check_tensor(z, atlas):
    z = np.asarray(z, dtype=float)
    if z.ndim != 3 or z.shape[1:] != (atlas.n_regions, len(MEASURES)):
        raise errors.ShapeMismatch(f"expected (N, {atlas.n_regions}, 4), got {z.shape}")
    return z


def build_mf(z, atlas: Atlas, subject_ids=None, params=None) -> FeatureMatrix:
    z = _check_tensor(z, atlas)
    ids = tuple(subject_ids) if subject_ids is not None else tuple(str(k) for k in range(len(z)))
    return FeatureMatrix("MF", ids, mf_descriptors(atlas.n_regions),
                         z.reshape(z.shape[0], z.shape[1] * z.shape[2]).copy(), atlas, params)


def euclidean(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise errors.ShapeMismatch(f"profiles {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise errors.NonFiniteValue("non-finite profile entry")
    acc = 0.0
    for ak, bk in zip(a.tolist(), b.tolist()):
        d = ak - bk
        acc += d * d
    return math.sqrt(acc)


def build_mcf(z, atlas: Atlas, subject_ids=None, params=None) -> FeatureMatrix:
    z = _check_tensor(z, atlas)
    ids = tuple(subject_ids) if subject_ids is not None else tuple(str(k) for k in range(len(z)))
    values = kernels.mcf_distances(z) if len(z) else np.empty((0, atlas.n_regions * (atlas.n_regions - 1) // 2))
    return FeatureMatrix("MCF", ids, mcf_descriptors(atlas.n_regions), values, atlas, params)


def build_features(kind: str, z, atlas: Atlas, subject_ids=None, params=None) -> FeatureMatrix:
    kind = kind.upper()
    if kind == "MF":
        return build_mf(z, atlas, subject_ids, params)
    if kind == "MCF":
        return build_mcf(z, atlas, subject_ids, params)
    raise ValueError(f"feature kind must be one of {KINDS}, got {kind!r}")


# --------------------------------------------------------------------------
# serialization


def write_feature_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["SUB_ID"] + fm.names())
        for sid, row in zip(fm.subject_ids, fm.values):
            w.writerow([sid] + [repr(float(v)) for v in row])


def _descriptor_lookup(atlas: Atlas, kind: str):
    descs = mf_descriptors(atlas.n_regions) if kind == "MF" else mcf_descriptors(atlas.n_regions)
    return {d.name(atlas): d for d in descs}


def read_feature_csv(path, atlas: Atlas) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "SUB_ID" or len(rows[0]) < 2:
        raise errors.BadHeader(f"{path}: expected SUB_ID followed by descriptor columns")
    kind = rows[0][1].split(":", 1)[0]
    if kind not in KINDS:
        raise errors.BadHeader(f"{path}: unknown feature kind {kind!r}")
    lookup = _descriptor_lookup(atlas, kind)
    try:
        descs = tuple(lookup[name] for name in rows[0][1:])
    except KeyError as exc:
        raise errors.ColumnMismatch(f"{path}: descriptor {exc.args[0]!r} not in atlas") from None
    ids = tuple(r[0] for r in rows[1:] if r)
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:] if r], dtype=float)
    values = values.reshape(len(ids), len(descs))
    if not np.isfinite(values).all():
        raise errors.NonFiniteValue(f"{path}: non-finite feature value")
    return FeatureMatrix(kind, ids, descs, values, atlas)


def write_feature_cache(fm: FeatureMatrix, path) -> None:
    """Binary cache keyed by the atlas digest."""
    desc = np.array([(d.i, d.j) for d in fm.descriptors], dtype=np.int64).reshape(-1, 2)
    with open(path, "wb") as fh:
        np.savez(fh, kind=np.array(fm.kind), atlas_digest=np.array(fm.atlas.digest()),
                 subject_ids=np.array(fm.subject_ids, dtype=str), descriptors=desc,
                 values=fm.values)


def read_feature_cache(path, atlas: Atlas) -> FeatureMatrix | None:
    """Load a cache written by :func:`write_feature_cache`.

    Returns ``None`` when the file is missing or was built for a different
    atlas, so callers recompute.
    """
    path = Path(path)
    if not path.is_file():
        return None
    with np.load(path, allow_pickle=False) as data:
        if str(data["atlas_digest"]) != atlas.digest():
            return None
        kind = str(data["kind"])
        descs = tuple(FeatureDescriptor(kind, int(i), int(j)) for i, j in data["descriptors"])
        return FeatureMatrix(kind, tuple(str(s) for s in data["subject_ids"]), descs,
                             data["values"].copy(), atlas)
