"""Atlas registry and input parsers.

Everything downstream works from a :class:`CohortDataset`: phenotype rows
joined 1:1 with per-subject ``(R, 4)`` morphometry matrices whose rows follow
the atlas index order. The wide CSV is the canonical exchange format; the
FreeSurfer stats reader is an importer into it.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import errors

log = logging.getLogger(__name__)

MEASURES = ("area", "thickness", "volume", "meancurv")
HEMISPHERES = ("L", "R")
LOBES = ("Frontal", "Parietal", "Temporal", "Occipital", "Insula",
         "Occipitotemporal", "Limbic")
GROUPS = ("TD", "ASD")
SEXES = ("M", "F")

ATLAS_HEADER = ["index", "name", "hemisphere", "lobe"]
PHENOTYPE_HEADER = ["SUB_ID", "SITE_ID", "AGE_AT_SCAN", "SEX", "DX_GROUP", "FIQ"]

# FreeSurfer stats column per measure, in MEASURES order
STATS_COLUMNS = ("SurfArea", "ThickAvg", "GrayVol", "MeanCurv")
DEFAULT_STATS_HEADER = ["StructName", "NumVert", "SurfArea", "GrayVol", "ThickAvg",
                        "ThickStd", "MeanCurv", "GausCurv", "FoldInd", "CurvInd"]
_HEMI_PREFIX = {"L": "lh", "R": "rh"}

BUNDLED_ATLAS = "destrieux_148.csv"
BUNDLED_ALIASES = "destrieux_aliases.csv"


@dataclass(frozen=True)
class Region:
    index: int
    name: str
    hemisphere: str
    lobe: str

    @property
    def struct_name(self) -> str:
        """Name as written in a per-hemisphere FreeSurfer stats table."""
        prefix = _HEMI_PREFIX[self.hemisphere] + "_"
        return self.name[len(prefix):] if self.name.startswith(prefix) else self.name


@dataclass(frozen=True)
class Atlas:
    regions: tuple[Region, ...]

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.regions]

    @property
    def lobes(self) -> list[str]:
        return [r.lobe for r in self.regions]

    def wide_columns(self) -> list[str]:
        return [f"{r.name}__{m}" for r in self.regions for m in MEASURES]

    def digest(self) -> str:
        """SHA-256 of the canonical CSV rendering; keys feature caches."""
        return hashlib.sha256(atlas_to_csv(self).encode()).hexdigest()


@dataclass(frozen=True)
class PhenotypeRecord:
    subject_id: str
    site_id: str
    age: float
    sex: str
    group: str
    fiq: float | None = None


@dataclass(frozen=True, eq=False)
class MorphometryRecord:
    subject_id: str
    values: np.ndarray  # (R, 4), MEASURES column order


@dataclass(frozen=True, eq=False)
class CohortDataset:
    atlas: Atlas
    phenotypes: tuple[PhenotypeRecord, ...]
    morphometry: tuple[MorphometryRecord, ...]
    dropped: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.phenotypes)

    @property
    def subject_ids(self) -> list[str]:
        return [p.subject_id for p in self.phenotypes]

    @property
    def labels(self) -> np.ndarray:
        """1 for ASD, 0 for TD."""
        return np.array([GROUPS.index(p.group) for p in self.phenotypes], dtype=np.int64)

    @property
    def ages(self) -> np.ndarray:
        return np.array([p.age for p in self.phenotypes], dtype=float)

    def tensor(self) -> np.ndarray:
        """Raw measures stacked as ``(n_subjects, R, 4)``."""
        if not self.morphometry:
            return np.empty((0, self.atlas.n_regions, len(MEASURES)))
        return np.stack([m.values for m in self.morphometry])

    def subset(self, keep) -> "CohortDataset":
        """Subjects at the positions in ``keep`` (a boolean mask or index list)."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return CohortDataset(
            atlas=self.atlas,
            phenotypes=tuple(self.phenotypes[i] for i in keep),
            morphometry=tuple(self.morphometry[i] for i in keep),
        )


# --------------------------------------------------------------------------
# atlas


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _atlas_from_rows(rows, source) -> Atlas:
    if not rows or [h.strip() for h in rows[0]] != ATLAS_HEADER:
        raise errors.BadHeader(f"{source}: expected header {','.join(ATLAS_HEADER)}")
    regions = []
    seen_idx, seen_name = set(), set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise errors.MalformedTable(f"{source}:{lineno}: expected 4 fields")
        idx_s, name, hemi, lobe = (c.strip() for c in row)
        try:
            idx = int(idx_s)
        except ValueError:
            raise errors.MalformedTable(f"{source}:{lineno}: bad index {idx_s!r}") from None
        if hemi not in HEMISPHERES:
            raise errors.UnknownToken(f"{source}:{lineno}: hemisphere {hemi!r}")
        if lobe not in LOBES:
            raise errors.UnknownToken(f"{source}:{lineno}: lobe {lobe!r}")
        if idx in seen_idx:
            raise errors.DuplicateIndex(f"{source}:{lineno}: index {idx}")
        if name in seen_name:
            raise errors.DuplicateName(f"{source}:{lineno}: name {name!r}")
        seen_idx.add(idx)
        seen_name.add(name)
        regions.append(Region(idx, name, hemi, lobe))
    regions.sort(key=lambda r: r.index)
    if [r.index for r in regions] != list(range(len(regions))):
        raise errors.NonDenseIndex(f"{source}: indices must be 0..{len(regions) - 1}")
    if not regions:
        raise errors.EmptyTable(f"{source}: no regions")
    return Atlas(tuple(regions))


def load_atlas(path=None) -> Atlas:
    """Read an ``index,name,hemisphere,lobe`` CSV; ``None`` loads the bundled
    148-region Destrieux registry."""
    if path is None:
        text = resources.files("morphconn.data").joinpath(BUNDLED_ATLAS).read_text("utf-8")
        return _atlas_from_rows(list(csv.reader(io.StringIO(text))), BUNDLED_ATLAS)
    return _atlas_from_rows(_read_csv(path), str(path))


def atlas_to_csv(atlas: Atlas) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ATLAS_HEADER)
    for r in atlas.regions:
        w.writerow([r.index, r.name, r.hemisphere, r.lobe])
    return buf.getvalue()


def write_atlas(atlas: Atlas, path) -> None:
    Path(path).write_text(atlas_to_csv(atlas), encoding="utf-8")


def load_aliases(path=None) -> dict[str, str]:
    if path is None:
        text = resources.files("morphconn.data").joinpath(BUNDLED_ALIASES).read_text("utf-8")
        rows = list(csv.reader(io.StringIO(text)))
    else:
        rows = _read_csv(path)
    return {alias.strip(): canon.strip() for alias, canon in rows[1:] if alias.strip()}


# --------------------------------------------------------------------------
# phenotypes


def parse_phenotypes(path) -> list[PhenotypeRecord]:
    rows = _read_csv(path)
    if not rows or [h.strip() for h in rows[0]] != PHENOTYPE_HEADER:
        raise errors.BadHeader(f"{path}: expected header {','.join(PHENOTYPE_HEADER)}")
    records, seen = [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(PHENOTYPE_HEADER):
            raise errors.MalformedTable(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
        sub, site, age_s, sex, group, fiq_s = (c.strip() for c in row)
        try:
            age = float(age_s)
        except ValueError:
            raise errors.BadAge(f"{path}:{lineno}: AGE_AT_SCAN={age_s!r}") from None
        if not math.isfinite(age) or age <= 0:
            raise errors.BadAge(f"{path}:{lineno}: AGE_AT_SCAN={age_s!r}")
        if group not in GROUPS:
            raise errors.BadGroup(f"{path}:{lineno}: DX_GROUP={group!r}")
        if sex not in SEXES:
            raise errors.UnknownToken(f"{path}:{lineno}: SEX={sex!r}")
        fiq = None
        if fiq_s:
            try:
                fiq = float(fiq_s)
            except ValueError:
                raise errors.MalformedTable(f"{path}:{lineno}: FIQ={fiq_s!r}") from None
            if not math.isfinite(fiq):
                raise errors.MalformedTable(f"{path}:{lineno}: FIQ={fiq_s!r}")
        if sub in seen:
            raise errors.DuplicateSubject(f"{path}:{lineno}: SUB_ID={sub!r}")
        seen.add(sub)
        records.append(PhenotypeRecord(sub, site, age, sex, group, fiq))
    return records


def write_phenotypes(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PHENOTYPE_HEADER)
        for r in records:
            w.writerow([r.subject_id, r.site_id, repr(r.age), r.sex, r.group,
                        "" if r.fiq is None else repr(r.fiq)])


# --------------------------------------------------------------------------
# wide morphometry


def parse_morphometry_wide(path, atlas: Atlas) -> list[MorphometryRecord]:
    rows = _read_csv(path)
    expected = ["SUB_ID"] + atlas.wide_columns()
    if not rows:
        raise errors.EmptyTable(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) != len(expected):
        raise errors.ColumnMismatch(
            f"{path}: {len(header)} columns, atlas with R={atlas.n_regions} needs {len(expected)}")
    if header != expected:
        bad = next(i for i, (h, e) in enumerate(zip(header, expected)) if h != e)
        raise errors.ColumnMismatch(f"{path}: column {bad} is {header[bad]!r}, expected {expected[bad]!r}")
    shape = (atlas.n_regions, len(MEASURES))
    records, seen = [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(expected):
            raise errors.ColumnMismatch(f"{path}:{lineno}: {len(row)} fields")
        sub = row[0].strip()
        if sub in seen:
            raise errors.DuplicateSubject(f"{path}:{lineno}: SUB_ID={sub!r}")
        seen.add(sub)
        try:
            vals = np.array([float(c) for c in row[1:]])
        except ValueError:
            col = next(expected[k + 1] for k, c in enumerate(row[1:]) if not _is_float(c))
            raise errors.NonFiniteValue(f"subject {sub}, column {col}: not a number") from None
        bad = ~np.isfinite(vals)
        if bad.any():
            col = expected[int(np.flatnonzero(bad)[0]) + 1]
            raise errors.NonFiniteValue(f"subject {sub}, column {col}")
        records.append(MorphometryRecord(sub, vals.reshape(shape)))
    return records


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_morphometry_wide(records, atlas: Atlas, path) -> None:
    """Write records in the wide layout; ``repr`` keeps values round-trip exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["SUB_ID"] + atlas.wide_columns())
        for rec in records:
            if rec.values.shape != (atlas.n_regions, len(MEASURES)):
                raise errors.ShapeMismatch(f"subject {rec.subject_id}: shape {rec.values.shape}")
            w.writerow([rec.subject_id] + [repr(float(v)) for v in rec.values.ravel()])


# --------------------------------------------------------------------------
# FreeSurfer stats tables


def _read_stats_table(path):
    """Return (header, data rows) of a '#'-commented whitespace table."""
    header = None
    data = []
    with open(path, encoding="latin-1") as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s.lstrip("#").split()
                if parts and parts[0] == "ColHeaders":
                    header = parts[1:]
                continue
            data.append(s.split())
    if not data:
        raise errors.EmptyTable(f"{path}: no data rows")
    header = header or DEFAULT_STATS_HEADER
    missing = [c for c in ("StructName",) + STATS_COLUMNS if c not in header]
    if missing:
        raise errors.MalformedTable(f"{path}: missing columns {missing}")
    for row in data:
        if len(row) != len(header):
            raise errors.MalformedTable(f"{path}: row {row[:1]} has {len(row)} fields, header {len(header)}")
    return header, data


def _find_stats_file(directory: Path, hemi: str) -> Path:
    prefix = _HEMI_PREFIX[hemi]
    for base in (directory, directory / "stats"):
        for name in (f"{prefix}.aparc.a2009s.stats", f"{prefix}.stats"):
            if (base / name).is_file():
                return base / name
    raise errors.MalformedTable(f"{directory}: no {prefix}.aparc.a2009s.stats table")


def parse_freesurfer_stats(directory, atlas: Atlas, subject_id=None,
                           aliases: dict[str, str] | None = None) -> MorphometryRecord:
    """Read ``lh``/``rh`` aparc stats tables of one subject.

    Rows are matched to atlas regions by exact StructName within each
    hemisphere, after mapping through the alias table. Structures absent
    from the atlas are ignored; atlas regions absent from the tables are an
    error.
    """
    directory = Path(directory)
    aliases = load_aliases() if aliases is None else aliases
    values = np.full((atlas.n_regions, len(MEASURES)), np.nan)
    for hemi in HEMISPHERES:
        path = _find_stats_file(directory, hemi)
        header, data = _read_stats_table(path)
        name_col = header.index("StructName")
        cols = [header.index(c) for c in STATS_COLUMNS]
        by_name = {}
        for row in data:
            name = aliases.get(row[name_col], row[name_col])
            if name in by_name:
                raise errors.MalformedTable(f"{path}: duplicate StructName {name!r}")
            by_name[name] = row
        for region in atlas.regions:
            if region.hemisphere != hemi:
                continue
            row = by_name.get(region.struct_name)
            if row is None:
                raise errors.MissingRegion(f"{path}: {region.name}")
            try:
                values[region.index] = [float(row[c]) for c in cols]
            except ValueError:
                raise errors.MalformedTable(f"{path}: non-numeric value for {region.name}") from None
    if not np.isfinite(values).all():
        raise errors.NonFiniteValue(f"{directory}: non-finite measure")
    return MorphometryRecord(subject_id or directory.name, values)


def import_freesurfer_tree(root, atlas: Atlas, jobs: int = 1) -> list[MorphometryRecord]:
    """Parse every subject directory under ``root``; result sorted by subject id."""
    dirs = sorted(p for p in Path(root).iterdir() if p.is_dir())
    aliases = load_aliases()
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            recs = list(pool.map(lambda d: parse_freesurfer_stats(d, atlas, aliases=aliases), dirs))
    else:
        recs = [parse_freesurfer_stats(d, atlas, aliases=aliases) for d in dirs]
    return sorted(recs, key=lambda r: r.subject_id)


# --------------------------------------------------------------------------
# join


def build_cohort(phenotypes, morphometry, atlas: Atlas, strict: bool = True) -> CohortDataset:
    """Join phenotype and morphometry records on subject id.

    Subjects present in only one input raise :class:`UnmatchedSubjects` in
    strict mode; in lenient mode they are dropped and listed in
    ``dataset.dropped``. Output order follows the phenotype table.
    """
    morph = {m.subject_id: m for m in morphometry}
    if len(morph) != len(morphometry):
        raise errors.DuplicateSubject("duplicate subject in morphometry records")
    shape = (atlas.n_regions, len(MEASURES))
    for m in morphometry:
        if m.values.shape != shape:
            raise errors.ShapeMismatch(f"subject {m.subject_id}: {m.values.shape} != {shape}")
    pheno_ids = {p.subject_id for p in phenotypes}
    unmatched = (pheno_ids ^ set(morph))
    if unmatched and strict:
        raise errors.UnmatchedSubjects(unmatched)
    if unmatched:
        log.warning("dropping %d unmatched subjects: %s", len(unmatched), sorted(unmatched))
    keep = [p for p in phenotypes if p.subject_id in morph]
    if not keep:
        raise errors.EmptyCohort("no subject present in both inputs")
    return CohortDataset(
        atlas=atlas,
        phenotypes=tuple(keep),
        morphometry=tuple(morph[p.subject_id] for p in keep),
        dropped=tuple(sorted(unmatched)),
    )


def load_cohort(atlas_path, phenotype_path, morphometry_path, strict=True) -> CohortDataset:
    atlas = load_atlas(atlas_path)
    return build_cohort(parse_phenotypes(phenotype_path),
                        parse_morphometry_wide(morphometry_path, atlas), atlas, strict=strict)
