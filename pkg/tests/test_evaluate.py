import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphconn import errors
from morphconn.atlas import build_cohort, load_atlas
from morphconn.cohort import default_bands
from morphconn.evaluate import (EDGE_HEADER, REFERENCE_TARGETS, ExperimentConfig, SplitSpec,
                                compute_metrics, edges_to_csv, f1_score, lobe_fractions,
                                metrics_grid_csv, rank_edges, run_experiment, summarize_repeats,
                                train_test_split)
from morphconn.features import FeatureDescriptor
from morphconn.forest import ForestParams
from morphconn.select import SelectionResult, TestResult
from morphconn.synth import BandSpec, SynthSpec, generate_cohort, random_mcf_pairs

# -- split ---------------------------------------------------------------------------


def test_split_ten_subjects():
    ids = [f"s{k}" for k in range(10)]
    labels = [0] * 5 + [1] * 5
    train, test = train_test_split(ids, labels, SplitSpec(seed=1))
    assert len(train) == 8 and len(test) == 2
    assert sorted(int(s[1:]) >= 5 for s in test) == [False, True]
    assert train_test_split(ids, labels, SplitSpec(seed=1)) == (train, test)


def test_split_class_too_small():
    with pytest.raises(errors.ClassTooSmall):
        train_test_split(["a", "b", "c"], [0, 0, 1], SplitSpec(seed=0))


def test_split_requires_seed():
    with pytest.raises(errors.ConfigError):
        train_test_split(["a", "b"], [0, 1], SplitSpec())


@settings(max_examples=100, deadline=None)
@given(n0=st.integers(2, 60), n1=st.integers(2, 60), frac=st.floats(0.05, 0.95),
       seed=st.integers(0, 2**63 - 1))
def test_split_partition_and_ratio(n0, n1, frac, seed):
    ids = [f"s{k:03d}" for k in range(n0 + n1)]
    labels = np.array([0] * n0 + [1] * n1)
    train, test = train_test_split(ids, labels, SplitSpec(frac, True, seed))
    assert set(train) | set(test) == set(ids) and not set(train) & set(test)
    tr = set(train)
    for c, n in ((0, n0), (1, n1)):
        k = sum(1 for s, l in zip(ids, labels) if l == c and s in tr)
        assert 1 <= k <= n - 1 and abs(k - frac * n) <= 1


# -- metrics -------------------------------------------------------------------------


def _confusion(tp, fn, fp, tn):
    y_true = [1] * (tp + fn) + [0] * (fp + tn)
    y_pred = [1] * tp + [0] * fn + [1] * fp + [0] * tn
    return y_true, y_pred


def test_metrics_hand_example():
    m = compute_metrics(*_confusion(43, 7, 10, 15))
    assert (m.tp, m.fn, m.fp, m.tn) == (43, 7, 10, 15)
    assert m.accuracy == pytest.approx(0.7733, abs=1e-4)
    assert m.precision == pytest.approx(0.8113, abs=1e-4)
    assert m.recall == 0.86


def test_reference_f1():
    assert f1_score(0.804, 0.860) == pytest.approx(0.8311, abs=5e-4)
    assert REFERENCE_TARGETS["6to11"]["MCF"]["accuracy"] == 0.758


def test_perfect_and_undefined():
    m = compute_metrics(["ASD", "TD", "ASD"], ["ASD", "TD", "ASD"])
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
    m = compute_metrics([0, 0, 0], [0, 0, 0])
    assert m.precision is None and m.recall is None and m.f1 is None and m.accuracy == 1.0
    assert "precision" in m.to_dict()


@settings(max_examples=200, deadline=None)
@given(tp=st.integers(0, 50), fn=st.integers(0, 50), fp=st.integers(0, 50), tn=st.integers(0, 50),
       seed=st.integers(0, 10**6))
def test_metric_identities(tp, fn, fp, tn, seed):
    if tp + fn + fp + tn == 0:
        return
    y_true, y_pred = _confusion(tp, fn, fp, tn)
    m = compute_metrics(y_true, y_pred)
    assert m.accuracy == (tp + tn) / (tp + fn + fp + tn)
    if tp + fp:
        assert m.precision == tp / (tp + fp)
    if tp + fn:
        assert m.recall == tp / (tp + fn)
    perm = np.random.default_rng(seed).permutation(len(y_true))
    assert compute_metrics(np.array(y_true)[perm], np.array(y_pred)[perm]) == m


@settings(max_examples=200, deadline=None)
@given(p=st.floats(1e-6, 1.0), r=st.floats(1e-6, 1.0))
def test_f1_between_precision_and_recall(p, r):
    f = f1_score(p, r)
    assert min(p, r) * (1 - 1e-12) <= f <= max(p, r) * (1 + 1e-12)


# -- lobes and edges -----------------------------------------------------------------


def test_lobe_fraction_examples():
    atlas = load_atlas()
    frontal = [r.index for r in atlas.regions if r.lobe == "Frontal"][:3]
    insula = [r.index for r in atlas.regions if r.lobe == "Insula"][0]
    occ = [r.index for r in atlas.regions if r.lobe == "Occipital"][0]
    fr = lobe_fractions([FeatureDescriptor("MF", i, 0) for i in frontal + [insula]], atlas)
    assert fr["Frontal"] == 75.0 and fr["Insula"] == 25.0 and len(fr) == 7
    fr = lobe_fractions([FeatureDescriptor("MCF", frontal[0], occ)], atlas)
    assert fr["Frontal"] == 50.0 and fr["Occipital"] == 50.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 300), kind=st.sampled_from(["MF", "MCF"]))
def test_lobe_fractions_sum_to_100(seed, k, kind):
    atlas = load_atlas()
    rng = np.random.default_rng(seed)
    if kind == "MF":
        ds = [FeatureDescriptor("MF", int(i), int(m)) for i, m in
              zip(rng.integers(0, 148, k), rng.integers(0, 4, k))]
    else:
        ds = []
        for _ in range(k):
            i, j = sorted(rng.choice(148, 2, replace=False))
            ds.append(FeatureDescriptor("MCF", int(i), int(j)))
    assert abs(sum(lobe_fractions(ds, atlas).values()) - 100.0) <= 0.1


def _selection(pvals, selected=None):
    selected = selected or [True] * len(pvals)
    results = tuple(TestResult(FeatureDescriptor("MCF", 0, k + 1), 1.0, 10.0, p, s)
                    for k, (p, s) in enumerate(zip(pvals, selected)))
    return SelectionResult(0.05, "train_only", results)


def test_rank_edges_order_and_truncation():
    atlas = load_atlas()
    edges = rank_edges(_selection([0.01, 0.001, 0.04]), atlas, k=100)
    assert [e.p_value for e in edges] == [0.001, 0.01, 0.04]
    assert [e.rank for e in edges] == [1, 2, 3]
    assert len(rank_edges(_selection([0.01, 0.001, 0.04]), atlas, k=2)) == 2


def test_rank_edges_ties_follow_descriptor_order():
    atlas = load_atlas()
    edges = rank_edges(_selection([0.02, 0.01, 0.02, 0.01]), atlas)
    assert [e.region_j for e in edges] == [atlas.regions[k].name for k in (2, 4, 1, 3)]


def test_rank_edges_rejects_mf():
    sel = SelectionResult(0.05, "train_only", (TestResult(FeatureDescriptor("MF", 0, 0), 1, 2, 0.01, True),))
    with pytest.raises(errors.WrongFeatureKind):
        rank_edges(sel, load_atlas())


def test_edges_csv_header():
    text = edges_to_csv(rank_edges(_selection([0.01]), load_atlas()))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == EDGE_HEADER and rows[1][0] == "1" and rows[1][6] == ""


# -- experiments ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def planted_cohort():
    spec = SynthSpec(seed=7, bands=(BandSpec("child", 6.0, 11.0, 40, 40),
                                    BandSpec("teen", 11.0, 18.0, 40, 40)),
                     atlas=20, mf_effect=((0, "area", 1.5), (3, "volume", 1.5)),
                     mcf_effect=random_mcf_pairs(20, 4, 0.8, 1))
    atlas, phenos, morph = generate_cohort(spec)
    return build_cohort(phenos, morph, atlas)


CFG = ExperimentConfig(seed=99, forest=ForestParams(n_trees=20))


def test_run_experiment_fields_and_determinism(planted_cohort):
    band = default_bands()[0]
    a = run_experiment(planted_cohort, band, "MCF", CFG, {"x": "abc"})
    b = run_experiment(planted_cohort, band, "MCF", CFG, {"x": "abc"})
    assert a.to_json() == b.to_json()
    doc = json.loads(a.to_json())
    for key in ("band", "feature_kind", "selection", "forest", "seeds", "metrics",
                "lobe_fractions", "top_edges", "input_hashes", "reference_targets"):
        assert doc[key] is not None, key
    assert doc["n_subjects"]["total"] == 80 and doc["n_subjects"]["test"] == 16
    assert abs(sum(doc["lobe_fractions"].values()) - 100) <= 0.1
    assert "6to11" in a.to_text()


def test_mf_and_mcf_share_the_split(planted_cohort):
    band = default_bands()[2]
    mf = run_experiment(planted_cohort, band, "MF", CFG)
    mcf = run_experiment(planted_cohort, band, "MCF", CFG)
    assert [s for s, _ in mf.test_predictions] == [s for s, _ in mcf.test_predictions]
    assert mf.seeds["split"] == mcf.seeds["split"] and mf.seeds["forest"] != mcf.seeds["forest"]
    assert mf.top_edges is None


def test_grid_of_six(planted_cohort):
    reports = [run_experiment(planted_cohort, b, k, CFG) for b in default_bands() for k in ("MF", "MCF")]
    rows = list(csv.reader(io.StringIO(metrics_grid_csv(reports))))
    assert len(rows) == 4 and rows[0][:2] == ["band", "MF_accuracy"] and len(rows[0]) == 9
    assert [r[0] for r in rows[1:]] == ["6to11", "11to18", "6to18"]


def test_zero_selected_is_a_stage_error(planted_cohort):
    cfg = ExperimentConfig(seed=99, alpha=0.0, forest=ForestParams(n_trees=5))
    with pytest.raises(errors.StageError) as info:
        run_experiment(planted_cohort, default_bands()[0], "MF", cfg)
    assert info.value.stage == "select"


def test_summarize_repeats():
    ms = [compute_metrics(*_confusion(5, 5, 0, 10)), compute_metrics(*_confusion(10, 0, 0, 10))]
    s = summarize_repeats(ms)
    assert s["accuracy"]["mean"] == pytest.approx(0.875) and s["accuracy"]["n"] == 2
    assert s["recall"]["sd"] == pytest.approx(np.std([0.5, 1.0], ddof=1))
