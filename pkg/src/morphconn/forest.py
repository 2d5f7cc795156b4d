"""Random forest of CART trees for the binary TD/ASD problem.

Each tree is grown on a bootstrap sample drawn from its own RNG stream
(``SeedSequence([seed, tree_index])``), and every node draws a fresh
feature subset from that stream. Training is therefore a pure function of
``(X, y, params)`` whatever order or thread the trees are built in.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import errors, kernels

LABELS = ("TD", "ASD")
FORMAT = "morphconn-forest"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_features: int | str = "sqrt"  # "sqrt", "all" or an explicit count
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int | None = None
    n_jobs: int = field(default=1, compare=False)

    def resolve_max_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            k = max(1, math.isqrt(n_features))
        elif self.max_features in ("all", None):
            k = n_features
        else:
            k = int(self.max_features)
        if not 1 <= k <= n_features:
            raise errors.ConfigError(f"max_features={self.max_features} invalid for p={n_features}")
        return k

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("n_jobs")
        return d


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini of an empty node")
    frac = counts / total
    return float(1.0 - np.sum(frac * frac))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), tree_index]))


def _majority(counts, prior) -> int:
    """Class with most votes; ties go to the larger prior, then label order."""
    best = 0
    for k in range(1, len(counts)):
        if counts[k] > counts[best] or (counts[k] == counts[best] and prior[k] > prior[best]):
            best = k
    return best


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2)
    value: np.ndarray  # majority class per node
    importance: np.ndarray  # per-feature impurity decrease, normalized

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        return kernels.apply_tree(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_record(self, node: int = 0) -> dict:
        if self.left[node] < 0:
            return {"counts": [int(c) for c in self.counts[node]]}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "counts": [int(c) for c in self.counts[node]],
            "left": self.to_record(int(self.left[node])),
            "right": self.to_record(int(self.right[node])),
        }

    @classmethod
    def from_record(cls, record: dict, n_features: int, prior) -> "Tree":
        feature, threshold, left, right, counts = [], [], [], [], []

        def visit(rec):
            node = len(feature)
            feature.append(rec.get("feature", -1))
            threshold.append(rec.get("threshold", np.nan))
            left.append(-1)
            right.append(-1)
            counts.append(rec["counts"])
            if "left" in rec:
                left[node] = visit(rec["left"])
                right[node] = visit(rec["right"])
            return node

        visit(record)
        counts = np.array(counts, dtype=np.int64)
        tree = cls(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                   np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), counts,
                   np.array([_majority(c, prior) for c in counts], dtype=np.int64),
                   np.zeros(n_features))
        tree.importance = _importance(tree, n_features)
        return tree


def _importance(tree: Tree, n_features: int) -> np.ndarray:
    imp = np.zeros(n_features)
    n_root = tree.counts[0].sum()
    for node in range(tree.n_nodes):
        lft, rgt = tree.left[node], tree.right[node]
        if lft < 0:
            continue
        n = tree.counts[node].sum()
        nl, nr = tree.counts[lft].sum(), tree.counts[rgt].sum()
        decrease = n * gini(tree.counts[node]) - nl * gini(tree.counts[lft]) - nr * gini(tree.counts[rgt])
        imp[tree.feature[node]] += decrease / n_root
    total = imp.sum()
    return imp / total if total > 0 else imp


def grow_tree(X, y, params: ForestParams, rng: np.random.Generator | None, prior) -> Tree:
    """Grow one CART tree on ``(X, y)`` exactly as given (no resampling).

    ``rng`` draws the per-node feature subsets; it may be ``None`` only when
    every feature is considered at every node.
    """
    n, p = X.shape
    k = params.resolve_max_features(p)
    all_features = np.arange(p, dtype=np.int64)
    if k < p and rng is None:
        raise errors.ConfigError("a feature-subsampling tree needs an RNG")
    feature, threshold, left, right, counts = [], [], [], [], []

    def build(idx, depth):
        node = len(feature)
        yy = y[idx]
        c1 = int(yy.sum())
        c = (len(idx) - c1, c1)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        if c[0] == 0 or c[1] == 0:
            return node
        if len(idx) < params.min_samples_split:
            return node
        if params.max_depth is not None and depth >= params.max_depth:
            return node
        cand = all_features if k == p else np.sort(rng.choice(p, size=k, replace=False))
        f, t, num, den = kernels.split_search(X[idx], yy, cand, params.min_samples_leaf)
        # child Gini 2*num/(n*den) must beat parent Gini 2*c0*c1/n^2, compared exactly
        if f < 0 or not num * len(idx) < c[0] * c[1] * den:
            return node
        go_left = X[idx, f] <= t
        feature[node] = f
        threshold[node] = t
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(np.arange(n), 0)
    counts = np.array(counts, dtype=np.int64).reshape(-1, 2)
    tree = Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), counts,
                np.array([_majority(cc, prior) for cc in counts], dtype=np.int64),
                np.zeros(p))
    tree.importance = _importance(tree, p)
    return tree


@dataclass(eq=False)
class ForestModel:
    params: ForestParams
    trees: list[Tree]
    n_features: int
    prior: tuple[int, int]
    labels: tuple[str, str] = LABELS

    @property
    def feature_importances(self) -> np.ndarray:
        return np.mean([t.importance for t in self.trees], axis=0)

    def tree_seeds(self) -> list[list[int]]:
        return [[int(self.params.seed), t] for t in range(len(self.trees))]

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "labels": list(self.labels),
            "params": self.params.to_dict(),
            "n_features": self.n_features,
            "prior": list(self.prior),
            "trees": [t.to_record() for t in self.trees],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise errors.DataValidationError("not a morphconn forest document")
        params = ForestParams(**doc["params"])
        prior = tuple(doc["prior"])
        trees = [Tree.from_record(r, doc["n_features"], prior) for r in doc["trees"]]
        return cls(params, trees, doc["n_features"], prior, tuple(doc["labels"]))


def encode_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype.kind in "US" or y.dtype == object:
        try:
            return np.array([LABELS.index(str(v)) for v in y], dtype=np.int64)
        except ValueError:
            raise errors.DataValidationError(f"labels must be in {LABELS}") from None
    y = y.astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise errors.DataValidationError("numeric labels must be 0 (TD) or 1 (ASD)")
    return y


def train_forest(X, y, params: ForestParams) -> ForestModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = encode_labels(y)
    if params.seed is None:
        raise errors.ConfigError("train_forest requires an explicit seed")
    if params.n_trees < 1:
        raise errors.ConfigError("n_trees must be >= 1")
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise errors.ShapeMismatch(f"X {X.shape} vs y {y.shape}")
    if X.shape[0] < 2:
        raise errors.InsufficientSubjects("need at least 2 training subjects")
    if X.shape[1] < 1:
        raise errors.EmptyFeatureSet("no features to train on")
    if len(np.unique(y)) < 2:
        raise errors.SingleClass("training labels contain a single class")
    if not np.isfinite(X).all():
        raise errors.NonFiniteValue("non-finite training value")
    params.resolve_max_features(X.shape[1])
    n = X.shape[0]
    prior = (int((y == 0).sum()), int((y == 1).sum()))

    def one(t):
        rng = tree_rng(params.seed, t)
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        return grow_tree(X[idx], y[idx], params, rng, prior)

    if params.n_jobs > 1:
        with ThreadPoolExecutor(params.n_jobs) as pool:
            trees = list(pool.map(one, range(params.n_trees)))
    else:
        trees = [one(t) for t in range(params.n_trees)]
    return ForestModel(params, trees, X.shape[1], prior)


def predict_proba(model: ForestModel, X) -> np.ndarray:
    """Vote fractions, shape (n_rows, 2), columns in label order."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise errors.ShapeMismatch(f"rows have {X.shape[1]} features, model expects {model.n_features}")
    votes = np.zeros((X.shape[0], 2), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        np.add.at(votes, (rows, tree.predict(X)), 1)
    return votes / len(model.trees)


def predict_batch(model: ForestModel, X) -> tuple[np.ndarray, np.ndarray]:
    frac = predict_proba(model, X)
    labels = np.array([_majority(f, model.prior) for f in frac], dtype=np.int64)
    return labels, frac


def predict(model: ForestModel, x) -> tuple[str, tuple[float, float]]:
    """Label and vote fractions for a single feature row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise errors.ShapeMismatch("predict takes one feature row")
    labels, frac = predict_batch(model, x[None, :])
    return model.labels[labels[0]], (float(frac[0, 0]), float(frac[0, 1]))
