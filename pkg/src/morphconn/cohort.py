"""Age bands and demographic summaries."""
from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass

import numpy as np

from .atlas import GROUPS, CohortDataset


@dataclass(frozen=True)
class AgeBand:
    label: str
    lower: float
    upper: float
    upper_inclusive: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"band {self.label}: lower must be < upper")

    def contains(self, age) -> np.ndarray:
        age = np.asarray(age, dtype=float)
        upper_ok = age <= self.upper if self.upper_inclusive else age < self.upper
        return (age >= self.lower) & upper_ok


def default_bands() -> list[AgeBand]:
    # 11.0 belongs to the older band only, so the two sub-bands partition 6to18
    return [
        AgeBand("6to11", 6.0, 11.0, upper_inclusive=False),
        AgeBand("11to18", 11.0, 18.0, upper_inclusive=True),
        AgeBand("6to18", 6.0, 18.0, upper_inclusive=True),
    ]


def band_by_label(label, bands=None) -> AgeBand:
    for b in bands or default_bands():
        if b.label == label:
            return b
    raise KeyError(f"unknown age band {label!r}")


def stratify(dataset: CohortDataset, band: AgeBand) -> CohortDataset:
    return dataset.subset(band.contains(dataset.ages))


@dataclass(frozen=True)
class GroupSummary:
    count: int
    male: int
    female: int
    fiq_n: int
    fiq_mean: float | None
    fiq_sd: float | None


def _summarize(records) -> GroupSummary:
    fiq = [r.fiq for r in records if r.fiq is not None]
    return GroupSummary(
        count=len(records),
        male=sum(r.sex == "M" for r in records),
        female=sum(r.sex == "F" for r in records),
        fiq_n=len(fiq),
        fiq_mean=statistics.fmean(fiq) if fiq else None,
        fiq_sd=statistics.stdev(fiq) if len(fiq) >= 2 else None,
    )


def demographic_summary(dataset: CohortDataset) -> dict[str, GroupSummary]:
    """Per-group counts, sex split and FIQ mean/sample SD, keyed TD then ASD."""
    if len(dataset) == 0:
        raise ValueError("demographic summary of an empty dataset")
    return {g: _summarize([p for p in dataset.phenotypes if p.group == g]) for g in GROUPS}


def summaries_to_json(per_band: dict[str, dict[str, GroupSummary]]) -> str:
    payload = {band: {g: asdict(s) for g, s in groups.items()} for band, groups in per_band.items()}
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def summaries_to_text(per_band: dict[str, dict[str, GroupSummary]]) -> str:
    """Aligned table laid out like a publication demographics table."""
    cols = [(band, g) for band in per_band for g in GROUPS]
    width = 16

    def fmt_fiq(s):
        if s.fiq_mean is None:
            return "n/a"
        sd = "n/a" if s.fiq_sd is None else f"{s.fiq_sd:.1f}"
        return f"{s.fiq_mean:.1f} ± {sd}"

    lines = ["".ljust(14) + "".join(f"{band:<{2 * width}}" for band in per_band),
             "".ljust(14) + "".join(f"{g:<{width}}" for _, g in cols)]
    rows = [
        ("Count", lambda s: str(s.count)),
        ("Gender", lambda s: f"{s.male} M {s.female} F"),
        ("FIQ (Mean±SD)", fmt_fiq),
    ]
    for name, fn in rows:
        lines.append(name.ljust(14) + "".join(f"{fn(per_band[b][g]):<{width}}" for b, g in cols))
    return "\n".join(line.rstrip() for line in lines) + "\n"

