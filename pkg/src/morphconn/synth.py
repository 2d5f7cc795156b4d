"""Synthetic cohorts with planted MF and MCF group effects.

Each subject's standardized profile matrix starts as independent N(0, 1)
noise. An MF effect shifts one (region, measure) mean for ASD subjects.
An MCF effect couples two regions for ASD subjects only:
``z_j <- c * z_i + sqrt(1 - c^2) * z_j`` on all four measures, which leaves
every marginal N(0, 1) but changes the expected inter-profile distance
from ``sqrt(8)`` towards ``sqrt(8 * (1 - c))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .atlas import (LOBES, MEASURES, Atlas, MorphometryRecord, PhenotypeRecord, Region,
                    load_atlas, write_atlas, write_morphometry_wide, write_phenotypes)
from .seeds import require_seed

DEFAULT_BASELINE = {
    "area": (1200.0, 250.0),
    "thickness": (2.5, 0.3),
    "volume": (3500.0, 800.0),
    "meancurv": (0.12, 0.02),
}


@dataclass(frozen=True)
class BandSpec:
    label: str
    age_min: float
    age_max: float
    n_td: int
    n_asd: int


@dataclass(frozen=True)
class SynthSpec:
    seed: int | None
    bands: tuple[BandSpec, ...]
    atlas: str | int = "bundled"  # "bundled", a CSV path, or a region count
    baseline: dict = field(default_factory=lambda: dict(DEFAULT_BASELINE))
    mf_effect: tuple = ()  # (region, measure, shift in SD units)
    mcf_effect: tuple = ()  # ((region_i, region_j), coupling in [-1, 1])
    sites: tuple[str, ...] = ("SITE_A", "SITE_B", "SITE_C")
    male_fraction: float = 0.8
    fiq_missing: float = 0.05

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        bands = tuple(BandSpec(**b) for b in d["bands"])
        mf = tuple((e["region"], e["measure"], float(e["shift"])) for e in d.get("mf_effect", ()))
        mcf = tuple((tuple(e["regions"]), float(e["coupling"])) for e in d.get("mcf_effect", ()))
        atlas_ref = d.get("atlas", "bundled")
        n_regions = resolve_atlas(atlas_ref).n_regions if ("mf_random" in d or "mcf_random" in d) else 0
        if "mf_random" in d:
            r = d["mf_random"]
            mf += random_mf_effects(n_regions, int(r["count"]), float(r["shift"]), int(r["seed"]))
        if "mcf_random" in d:
            r = d["mcf_random"]
            mcf += random_mcf_pairs(n_regions, int(r["count"]), float(r["coupling"]), int(r["seed"]))
        baseline = dict(DEFAULT_BASELINE)
        baseline.update({k: tuple(v) for k, v in d.get("baseline", {}).items()})
        return cls(seed=d.get("seed"), bands=bands, atlas=atlas_ref,
                   baseline=baseline, mf_effect=mf, mcf_effect=mcf,
                   sites=tuple(d.get("sites", cls.sites)),
                   male_fraction=d.get("male_fraction", 0.8),
                   fiq_missing=d.get("fiq_missing", 0.05))

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synthetic_atlas(n_regions: int) -> Atlas:
    """``n_regions`` generic regions, first half left, lobes assigned cyclically."""
    if n_regions < 1:
        raise errors.ConfigError("a synthetic atlas needs at least one region")
    half = (n_regions + 1) // 2
    regions = []
    for k in range(n_regions):
        hemi, local = ("L", k) if k < half else ("R", k - half)
        prefix = "lh" if hemi == "L" else "rh"
        regions.append(Region(k, f"{prefix}_region{local:03d}", hemi, LOBES[local % len(LOBES)]))
    return Atlas(tuple(regions))


def resolve_atlas(ref) -> Atlas:
    if isinstance(ref, Atlas):
        return ref
    if ref == "bundled" or ref is None:
        return load_atlas()
    if isinstance(ref, int):
        return synthetic_atlas(ref)
    return load_atlas(ref)


def _region_index(atlas, ref):
    if isinstance(ref, int):
        if not 0 <= ref < atlas.n_regions:
            raise errors.ConfigError(f"region index {ref} out of range")
        return ref
    try:
        return atlas.names.index(ref)
    except ValueError:
        raise errors.ConfigError(f"unknown region {ref!r}") from None


def _validate(spec: SynthSpec, atlas: Atlas):
    if not spec.bands:
        raise errors.ConfigError("synth spec needs at least one band")
    for b in spec.bands:
        if b.n_td < 1 or b.n_asd < 1:
            raise errors.ConfigError(f"band {b.label}: both groups must be nonempty")
        if not 0 < b.age_min < b.age_max:
            raise errors.ConfigError(f"band {b.label}: need 0 < age_min < age_max")
    for m in MEASURES:
        mean, sd = spec.baseline[m]
        if not (math.isfinite(mean) and math.isfinite(sd) and sd > 0):
            raise errors.ConfigError(f"baseline for {m} must be finite with sd > 0")
    mf = []
    for region, measure, shift in spec.mf_effect:
        if measure not in MEASURES:
            raise errors.ConfigError(f"unknown measure {measure!r}")
        if not math.isfinite(shift):
            raise errors.ConfigError("mf shift must be finite")
        mf.append((_region_index(atlas, region), MEASURES.index(measure), shift))
    mcf, used = [], set()
    for (ri, rj), c in spec.mcf_effect:
        i, j = _region_index(atlas, ri), _region_index(atlas, rj)
        if i == j or not -1 <= c <= 1:
            raise errors.ConfigError(f"bad mcf effect ({ri}, {rj}, {c})")
        if i in used or j in used:
            # disjoint pairs keep every marginal exactly N(0, 1)
            raise errors.ConfigError(f"region in more than one mcf pair: ({ri}, {rj})")
        used.update((i, j))
        mcf.append((i, j, c))
    if not 0 <= spec.male_fraction <= 1 or not 0 <= spec.fiq_missing <= 1:
        raise errors.ConfigError("fractions must lie in [0, 1]")
    return mf, mcf


def generate_cohort(spec: SynthSpec):
    """Draw phenotype and morphometry records.

    Returns ``(atlas, phenotypes, morphometry)``. Subjects are numbered in
    band order, TD before ASD within a band.
    """
    seed = require_seed(spec.seed, "synth")
    atlas = resolve_atlas(spec.atlas)
    mf, mcf = _validate(spec, atlas)
    rng = np.random.default_rng(seed)
    means = np.array([spec.baseline[m][0] for m in MEASURES])
    sds = np.array([spec.baseline[m][1] for m in MEASURES])
    R = atlas.n_regions
    phenos, morph = [], []
    serial = 0
    for band in spec.bands:
        for group, n in (("TD", band.n_td), ("ASD", band.n_asd)):
            z = rng.standard_normal((n, R, len(MEASURES)))
            if group == "ASD":
                for r, m, shift in mf:
                    z[:, r, m] += shift
                for i, j, c in mcf:
                    z[:, j, :] = c * z[:, i, :] + math.sqrt(1.0 - c * c) * z[:, j, :]
            ages = rng.uniform(band.age_min, band.age_max, n)
            male = rng.random(n) < spec.male_fraction
            site = rng.integers(0, len(spec.sites), n)
            fiq_mu, fiq_sd = (112.0, 13.0) if group == "TD" else (105.0, 16.0)
            fiq = rng.normal(fiq_mu, fiq_sd, n)
            fiq_absent = rng.random(n) < spec.fiq_missing
            for k in range(n):
                serial += 1
                sid = f"sub-{serial:05d}"
                phenos.append(PhenotypeRecord(
                    sid, spec.sites[site[k]], round(float(ages[k]), 2),
                    "M" if male[k] else "F", group,
                    None if fiq_absent[k] else round(float(fiq[k]), 1)))
                morph.append(MorphometryRecord(sid, means + sds * z[k]))
    return atlas, phenos, morph


def write_cohort(spec: SynthSpec, out_dir) -> dict[str, Path]:
    """Generate and write ``atlas.csv``, ``phenotypes.csv``, ``morphometry.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atlas, phenos, morph = generate_cohort(spec)
    paths = {"atlas": out / "atlas.csv", "phenotypes": out / "phenotypes.csv",
             "morphometry": out / "morphometry.csv"}
    write_atlas(atlas, paths["atlas"])
    write_phenotypes(phenos, paths["phenotypes"])
    write_morphometry_wide(morph, atlas, paths["morphometry"])
    return paths


def child_adolescent_bands(n_td=50, n_asd=50) -> tuple[BandSpec, ...]:
    """Two sub-bands covering 6 to 18 years."""
    return (BandSpec("child", 6.0, 11.0, n_td, n_asd),
            BandSpec("adolescent", 11.0, 18.0, n_td, n_asd))


def random_mcf_pairs(n_regions: int, n_pairs: int, coupling: float, seed: int) -> tuple:
    """``n_pairs`` disjoint region pairs for an MCF effect."""
    if 2 * n_pairs > n_regions:
        raise errors.ConfigError("not enough regions for disjoint pairs")
    perm = np.random.default_rng(seed).permutation(n_regions)[: 2 * n_pairs]
    return tuple(((int(min(a, b)), int(max(a, b))), coupling) for a, b in perm.reshape(-1, 2))


def random_mf_effects(n_regions: int, n_effects: int, shift: float, seed: int) -> tuple:
    rng = np.random.default_rng(seed)
    cells = rng.choice(n_regions * len(MEASURES), size=n_effects, replace=False)
    return tuple((int(c // len(MEASURES)), MEASURES[c % len(MEASURES)], shift) for c in np.sort(cells))
