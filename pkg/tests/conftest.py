import math

import numpy as np
import pytest

from morphconn.atlas import (MEASURES, Atlas, MorphometryRecord, PhenotypeRecord, Region,
                             build_cohort)
from morphconn.synth import BandSpec, SynthSpec, generate_cohort


def t_density(x, df):
    c = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(c - (df + 1) / 2 * math.log1p(x * x / df))


def t_pvalue_by_quadrature(t, df):
    """Independent two-sided p: 1 - 2 * integral of the density over [0, |t|]."""
    from scipy.integrate import quad

    val, _ = quad(t_density, 0.0, abs(t), args=(df,), epsabs=1e-13, epsrel=1e-13, limit=400)
    return 1.0 - 2.0 * val


@pytest.fixture
def toy_atlas():
    return Atlas((
        Region(0, "lh_A", "L", "Frontal"),
        Region(1, "lh_B", "L", "Occipital"),
        Region(2, "rh_A", "R", "Insula"),
    ))


@pytest.fixture
def toy_atlas_csv(tmp_path):
    p = tmp_path / "atlas.csv"
    p.write_text("index,name,hemisphere,lobe\n0,lh_A,L,Frontal\n1,lh_B,L,Occipital\n2,rh_A,R,Insula\n")
    return p


def make_dataset(atlas, ages, groups, seed=0, sexes=None, fiqs=None):
    rng = np.random.default_rng(seed)
    phenos, morph = [], []
    for k, (age, group) in enumerate(zip(ages, groups)):
        sid = f"s{k:03d}"
        sex = sexes[k] if sexes else "M"
        fiq = fiqs[k] if fiqs else None
        phenos.append(PhenotypeRecord(sid, "X", float(age), sex, group, fiq))
        morph.append(MorphometryRecord(sid, rng.normal(size=(atlas.n_regions, len(MEASURES)))))
    return build_cohort(phenos, morph, atlas)


@pytest.fixture
def small_cohort(toy_atlas):
    ages = [7, 8, 9, 10, 12, 13, 14, 15, 16, 17] * 2
    groups = ["TD"] * 10 + ["ASD"] * 10
    return make_dataset(toy_atlas, ages, groups)


@pytest.fixture(scope="session")
def mcf_only_cohort():
    """150/150 subjects, bundled atlas, coupling planted on 30 disjoint pairs."""
    from morphconn.atlas import build_cohort as _build
    from morphconn.synth import random_mcf_pairs

    spec = SynthSpec(seed=20240601, bands=(BandSpec("child", 6.0, 11.0, 150, 150),),
                     mcf_effect=random_mcf_pairs(148, 30, 0.6, 7))
    atlas, phenos, morph = generate_cohort(spec)
    return _build(phenos, morph, atlas)


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
