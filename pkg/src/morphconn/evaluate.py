"""Train/test splitting, metrics, lobe tables, edge ranking and the
per-band experiment runner."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, errors
from .atlas import GROUPS, LOBES, Atlas, CohortDataset
from .cohort import AgeBand, stratify
from .features import (FIT_SCOPES, KINDS, apply_standardizer,
                       build_features, fit_standardizer)
from .forest import ForestModel, ForestParams, predict_batch, train_forest
from .seeds import derive_seed, require_seed
from .select import SCOPES, SelectionResult, select_features

REPORT_SCHEMA = "morphconn-report/1"
CRITERIA = ("pvalue", "gini_importance")

# accuracies (and the 6to11 MCF precision/recall/F1) obtained on the
# 710-subject ABIDE I+II cohort; kept for comparison, not reproducible here
REFERENCE_TARGETS = {
    "6to11": {"MF": {"accuracy": 0.677},
              "MCF": {"accuracy": 0.758, "f1": 0.831, "recall": 0.86, "precision": 0.804}},
    "11to18": {"MF": {"accuracy": 0.593}, "MCF": {"accuracy": 0.568}},
    "6to18": {"MF": {"accuracy": 0.6036}, "MCF": {"accuracy": 0.676}},
}


# --------------------------------------------------------------------------
# split


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    stratify_by_label: bool = True
    seed: int | None = None

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise errors.ConfigError("train_fraction must lie in (0, 1)")


def _n_train(n, frac):
    k = math.floor(n * frac + 0.5)
    return min(max(k, 1), n - 1)


def train_test_split(subject_ids, labels, spec: SplitSpec) -> tuple[list, list]:
    """Disjoint, exhaustive split; per class ``round(frac * size)`` go to train.

    Both returned lists keep the input order.
    """
    seed = require_seed(spec.seed, "train_test_split")
    ids = list(subject_ids)
    labels = np.asarray(labels)
    if len(ids) != len(labels):
        raise errors.ShapeMismatch("subject ids and labels differ in length")
    rng = np.random.default_rng(seed)
    strata = [np.flatnonzero(labels == c) for c in np.unique(labels)] \
        if spec.stratify_by_label else [np.arange(len(ids))]
    train_pos = []
    for members in strata:
        if len(members) < 2:
            raise errors.ClassTooSmall(
                f"class of size {len(members)} cannot fill both train and test")
        k = _n_train(len(members), spec.train_fraction)
        train_pos.extend(rng.permutation(members)[:k].tolist())
    in_train = np.zeros(len(ids), dtype=bool)
    in_train[train_pos] = True
    return ([s for s, t in zip(ids, in_train) if t],
            [s for s, t in zip(ids, in_train) if not t])


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None

    def to_dict(self):
        return asdict(self)


def _ratio(num, den):
    return num / den if den else None


def f1_score(precision, recall):
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def compute_metrics(y_true, y_pred) -> Metrics:
    """Confusion-matrix metrics with ASD (label 1) as the positive class.

    Ratios with a zero denominator are ``None``.
    """
    y_true = _as_codes(y_true)
    y_pred = _as_codes(y_pred)
    if y_true.shape != y_pred.shape:
        raise errors.ShapeMismatch("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise errors.ShapeMismatch("no predictions to score")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return Metrics(tp, fp, tn, fn, (tp + tn) / (tp + fp + tn + fn), precision, recall,
                   f1_score(precision, recall))


def _as_codes(y):
    y = np.asarray(y)
    if y.dtype.kind in "USO":
        return np.array([GROUPS.index(str(v)) for v in y], dtype=np.int64)
    return y.astype(np.int64)


# --------------------------------------------------------------------------
# lobe fractions and edges


def lobe_fractions(descriptors, atlas: Atlas) -> dict[str, float]:
    """Percentage of selected features per lobe, every lobe listed.

    An MF feature counts once for its region's lobe; an MCF edge counts once
    for each endpoint's lobe.
    """
    counts = Counter()
    for d in descriptors:
        for r in d.regions:
            counts[atlas.regions[r].lobe] += 1
    total = sum(counts.values())
    if total == 0:
        return {lobe: 0.0 for lobe in LOBES}
    return {lobe: 100.0 * counts[lobe] / total for lobe in LOBES}


@dataclass(frozen=True)
class RankedEdge:
    rank: int
    region_i: str
    region_j: str
    lobe_i: str
    lobe_j: str
    p_value: float
    gini_importance: float | None


def rank_edges(selection: SelectionResult, atlas: Atlas, model: ForestModel | None = None,
               criterion: str = "pvalue", k: int = 100) -> list[RankedEdge]:
    """Top-``k`` selected MCF edges.

    ``model`` must have been trained on the selected columns in descriptor
    order; its Gini importances are attached when given. Ties keep
    descriptor order.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    chosen = [r for r in selection.results if r.selected]
    if any(r.descriptor.kind != "MCF" for r in selection.results):
        raise errors.WrongFeatureKind("edge ranking needs MCF features")
    if model is not None:
        imp = model.feature_importances
        if len(imp) != len(chosen):
            raise errors.ShapeMismatch("model was not trained on this selection")
    else:
        imp = None
        if criterion == "gini_importance":
            raise ValueError("gini_importance ranking needs a model")
    order = list(range(len(chosen)))
    if criterion == "pvalue":
        order.sort(key=lambda n: chosen[n].p)
    else:
        order.sort(key=lambda n: -imp[n])
    edges = []
    for rank, n in enumerate(order[:k], start=1):
        d = chosen[n].descriptor
        ri, rj = atlas.regions[d.i], atlas.regions[d.j]
        edges.append(RankedEdge(rank, ri.name, rj.name, ri.lobe, rj.lobe, chosen[n].p,
                                None if imp is None else float(imp[n])))
    return edges


EDGE_HEADER = ["rank", "region_i", "region_j", "lobe_i", "lobe_j", "p_value", "gini_importance"]


def edges_to_csv(edges) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EDGE_HEADER)
    for e in edges:
        w.writerow([e.rank, e.region_i, e.region_j, e.lobe_i, e.lobe_j, f"{e.p_value:.17g}",
                    "" if e.gini_importance is None else f"{e.gini_importance:.17g}"])
    return buf.getvalue()


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int | None = None
    alpha: float = 0.05
    selection_scope: str = "train_only"
    standardization_scope: str = "train_only"
    pooled_t: bool = False
    train_fraction: float = 0.8
    stratify_split: bool = True
    forest: ForestParams = field(default_factory=ForestParams)
    top_k: int = 100
    edge_criterion: str = "pvalue"

    def __post_init__(self):
        if self.selection_scope not in SCOPES:
            raise errors.ConfigError(f"selection_scope must be one of {SCOPES}")
        if self.standardization_scope not in FIT_SCOPES:
            raise errors.ConfigError(f"standardization_scope must be one of {FIT_SCOPES}")
        if self.edge_criterion not in CRITERIA:
            raise errors.ConfigError(f"edge_criterion must be one of {CRITERIA}")
        if not 0 <= self.alpha <= 1:
            raise errors.ConfigError("alpha must lie in [0, 1]")


def experiment_seeds(master, band_label, kind) -> dict[str, int]:
    # the split depends on the band only, so MF and MCF share test subjects
    return {"split": derive_seed(master, f"split/{band_label}"),
            "forest": derive_seed(master, f"forest/{band_label}/{kind}")}


@dataclass
class ExperimentReport:
    band: AgeBand
    feature_kind: str
    n_subjects: dict
    standardization_scope: str
    selection: dict
    forest: dict
    seeds: dict
    metrics: Metrics
    lobe_fractions: dict
    top_edges: list | None
    input_hashes: dict
    test_predictions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "tool_version": __version__,
            "band": asdict(self.band),
            "feature_kind": self.feature_kind,
            "n_subjects": self.n_subjects,
            "standardization_scope": self.standardization_scope,
            "selection": self.selection,
            "forest": self.forest,
            "seeds": self.seeds,
            "metrics": self.metrics.to_dict(),
            "lobe_fractions": self.lobe_fractions,
            "top_edges": None if self.top_edges is None else [asdict(e) for e in self.top_edges],
            "test_predictions": self.test_predictions,
            "input_hashes": self.input_hashes,
            "reference_targets": REFERENCE_TARGETS.get(self.band.label, {}).get(self.feature_kind),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        m = self.metrics

        def pct(v):
            return "n/a" if v is None else f"{100 * v:.1f}%"

        lines = [
            f"band {self.band.label}  features {self.feature_kind}",
            f"subjects: {self.n_subjects['total']} (train {self.n_subjects['train']}, "
            f"test {self.n_subjects['test']})",
            f"selection: {self.selection['selected_count']}/{self.selection['n_features']} "
            f"features at p < {self.selection['alpha']} ({self.selection['scope']})",
            f"forest: {self.forest['n_trees']} trees, max_features={self.forest['max_features_resolved']}",
            f"accuracy {pct(m.accuracy)}  precision {pct(m.precision)}  "
            f"recall {pct(m.recall)}  f1 {pct(m.f1)}",
            f"confusion (ASD positive): TP={m.tp} FP={m.fp} TN={m.tn} FN={m.fn}",
            "lobes: " + ", ".join(f"{lobe} {v:.2f}%" for lobe, v in
                                  sorted(self.lobe_fractions.items(), key=lambda kv: -kv[1]) if v > 0),
        ]
        ref = REFERENCE_TARGETS.get(self.band.label, {}).get(self.feature_kind)
        if ref:
            lines.append("reference (ABIDE): " + ", ".join(f"{k} {100 * v:.1f}%" for k, v in ref.items()))
        return "\n".join(lines) + "\n"


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except errors.StageError:
        raise
    except Exception as exc:
        raise errors.StageError(name, exc) from exc


def run_experiment(dataset: CohortDataset, band: AgeBand, feature_kind: str,
                   config: ExperimentConfig, input_hashes: dict | None = None) -> ExperimentReport:
    """stratify -> split -> standardize -> features -> select -> train -> evaluate."""
    kind = feature_kind.upper()
    if kind not in KINDS:
        raise errors.ConfigError(f"feature kind must be one of {KINDS}")
    seeds = experiment_seeds(require_seed(config.seed, "run_experiment"), band.label, kind)

    cohort = _stage("stratify", stratify, dataset, band)
    ids = cohort.subject_ids
    y = cohort.labels
    train_ids, test_ids = _stage("split", train_test_split, ids, y,
                                 SplitSpec(config.train_fraction, config.stratify_split, seeds["split"]))
    train_set = set(train_ids)
    train_mask = np.array([s in train_set for s in ids])

    fit_mask = train_mask if config.standardization_scope == "train_only" else None
    params = _stage("standardize", fit_standardizer, cohort, fit_mask, config.standardization_scope)
    z = _stage("standardize", apply_standardizer, params, cohort)
    fm = _stage("features", build_features, kind, z, cohort.atlas, ids, params)

    sel_ids = train_ids if config.selection_scope == "train_only" else ids
    sel_mask = train_mask if config.selection_scope == "train_only" else np.ones(len(ids), bool)
    selection = _stage("select", select_features, fm, y[sel_mask], config.alpha,
                       config.selection_scope, sel_ids, config.pooled_t)
    if selection.selected_count == 0:
        raise errors.StageError("select", errors.EmptyFeatureSet(
            f"no {kind} feature reached p < {config.alpha}"))
    chosen = fm.columns(selection.mask)

    fparams = replace(config.forest, seed=seeds["forest"])
    model = _stage("train", train_forest, chosen.rows(train_ids), y[train_mask], fparams)
    y_pred, _ = _stage("predict", predict_batch, model, chosen.rows(test_ids))
    metrics = _stage("metrics", compute_metrics, y[~train_mask], y_pred)

    lobes = lobe_fractions(selection.selected_descriptors, cohort.atlas)
    edges = None
    if kind == "MCF":
        edges = _stage("report", rank_edges, selection, cohort.atlas, model,
                       config.edge_criterion, config.top_k)

    def group_counts(mask):
        return {g: int(np.sum(y[mask] == k)) for k, g in enumerate(GROUPS)}

    forest_info = fparams.to_dict()
    forest_info["max_features_resolved"] = fparams.resolve_max_features(chosen.n_features)
    forest_info["tree_seeds"] = "SeedSequence([seed, tree_index])"
    return ExperimentReport(
        band=band,
        feature_kind=kind,
        n_subjects={"total": len(ids), "train": len(train_ids), "test": len(test_ids),
                    "train_by_group": group_counts(train_mask),
                    "test_by_group": group_counts(~train_mask)},
        standardization_scope=config.standardization_scope,
        selection={"alpha": config.alpha, "scope": config.selection_scope,
                   "test": "student_pooled" if config.pooled_t else "welch",
                   "n_features": fm.n_features, "selected_count": selection.selected_count},
        forest=forest_info,
        seeds={"master": int(config.seed), **seeds},
        metrics=metrics,
        lobe_fractions=lobes,
        top_edges=edges,
        input_hashes=dict(input_hashes or {}),
        test_predictions=[[s, GROUPS[int(p)]] for s, p in zip(test_ids, y_pred)],
    )


def metrics_grid_csv(reports) -> str:
    """Bands as rows, ``{kind}_{metric}`` as columns; absent values empty."""
    names = ("accuracy", "precision", "recall", "f1")
    kinds = [k for k in KINDS if any(r.feature_kind == k for r in reports)]
    bands = list(dict.fromkeys(r.band.label for r in reports))
    cell = {(r.band.label, r.feature_kind): r.metrics for r in reports}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["band"] + [f"{k}_{m}" for k in kinds for m in names])
    for b in bands:
        row = [b]
        for k in kinds:
            m = cell.get((b, k))
            for name in names:
                v = None if m is None else getattr(m, name)
                row.append("" if v is None else f"{v:.6f}")
        w.writerow(row)
    return buf.getvalue()


def summarize_repeats(metric_runs: list[Metrics]) -> dict:
    """Mean and sample SD of each metric across repeated seeds."""
    out = {}
    for name in ("accuracy", "precision", "recall", "f1"):
        vals = [getattr(m, name) for m in metric_runs if getattr(m, name) is not None]
        out[name] = {
            "n": len(vals),
            "mean": float(np.mean(vals)) if vals else None,
            "sd": float(np.std(vals, ddof=1)) if len(vals) >= 2 else None,
        }
    return out
