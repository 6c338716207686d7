"""Bagged Gini decision trees, N-fold cross-validation and feature importance.

Label 1 is "alarming", 0 is "not alarming".  Splits are ``x[f] <= v`` with
``v`` a training value, so a single tree only depends on feature ranks.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .rng import stream
from .signals import ALARMING, NOT_ALARMING

LEAF = -1


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        if len(self.feature_names) != X.shape[1]:
            raise ValueError("feature_names does not match X")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if not np.isfinite(X).all():
            raise ValueError("features must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.feature_names)

    @classmethod
    def from_csv(cls, path, tau: float | None = None, drop=("event_id", "tau_hours")) -> "Dataset":
        """Read a feature CSV; ``label`` holds alarming / not_alarming."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty dataset")
        if tau is not None:
            rows = [r for r in rows if float(r["tau_hours"]) == tau]
        names = [c for c in rows[0] if c not in drop and c != "label"]
        X = [[float(r[c]) for c in names] for r in rows]
        y = [label_to_int(r["label"]) for r in rows]
        return cls(np.array(X), np.array(y), tuple(names))


def label_to_int(label: str) -> int:
    if label == ALARMING:
        return 1
    if label == NOT_ALARMING:
        return 0
    raise ValueError(f"unknown label {label!r}")


def int_to_label(v: int) -> str:
    return ALARMING if v else NOT_ALARMING


# --------------------------------------------------------------------------
# single tree

@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (nodes, 2) weighted class counts
    importance: np.ndarray  # raw weighted impurity decrease per feature

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def leaves(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f != LEAF
            if not inner.any():
                return node
            i = np.flatnonzero(inner)
            go_left = X[i, f[i]] <= self.threshold[node[i]]
            node[i] = np.where(go_left, self.left[node[i]], self.right[node[i]])

    def predict(self, X) -> np.ndarray:
        c = self.counts[self.leaves(X)]
        return (c[:, 1] >= c[:, 0]).astype(np.int64)  # leaf ties go to alarming

    def to_config(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "counts", "importance")}

    @classmethod
    def from_config(cls, cfg) -> "Tree":
        return cls(np.array(cfg["feature"], dtype=np.int64), np.array(cfg["threshold"], dtype=np.float64),
                   np.array(cfg["left"], dtype=np.int64), np.array(cfg["right"], dtype=np.int64),
                   np.array(cfg["counts"], dtype=np.float64).reshape(-1, 2),
                   np.array(cfg["importance"], dtype=np.float64))


def _gini_mass(c0, c1):
    """n·gini for class masses; n·(1 − p0² − p1²) = 2 c0 c1 / n."""
    n = c0 + c1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, 2.0 * c0 * c1 / n, 0.0)


def _best_split(X, y, w, min_leaf):
    """(decrease, feature, threshold) of the best split, or None."""
    n0 = float(w[y == 0].sum())
    n1 = float(w[y == 1].sum())
    parent = float(_gini_mass(n0, n1))
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        c1 = np.cumsum(w[order] * (y[order] == 1))
        ct = np.cumsum(w[order])
        c0 = ct - c1
        # split after position i needs a change of value at i+1
        ok = (xs[:-1] < xs[1:]) & (ct[:-1] >= min_leaf) & (ct[-1] - ct[:-1] >= min_leaf)
        if not ok.any():
            continue
        i = np.flatnonzero(ok)
        dec = parent - _gini_mass(c0[i], c1[i]) - _gini_mass(n0 - c0[i], n1 - c1[i])
        k = int(np.argmax(dec))
        if dec[k] > 1e-12 and (best is None or dec[k] > best[0] + 1e-12):
            best = (float(dec[k]), f, float(xs[i[k]]))
    return best


def fit_tree(X, y, max_depth: int = 6, min_leaf: int = 2, weights=None) -> Tree:
    """Greedy Gini tree; ``weights`` are bootstrap multiplicities."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    feat, thr, left, right, counts = [], [], [], [], []
    importance = np.zeros(X.shape[1])

    def grow(idx, depth):
        node = len(feat)
        c = [float(w[idx][y[idx] == 0].sum()), float(w[idx][y[idx] == 1].sum())]
        feat.append(LEAF); thr.append(0.0); left.append(LEAF); right.append(LEAF); counts.append(c)
        if depth >= max_depth or min(c) == 0 or sum(c) < 2 * min_leaf:
            return node
        split = _best_split(X[idx], y[idx], w[idx], min_leaf)
        if split is None:
            return node
        dec, f, v = split
        importance[f] += dec
        go = X[idx, f] <= v
        feat[node], thr[node] = f, v
        left[node] = grow(idx[go], depth + 1)
        right[node] = grow(idx[~go], depth + 1)
        return node

    if len(y) == 0:
        raise ValueError("cannot fit a tree on empty data")
    grow(np.arange(len(y)), 0)
    return Tree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(counts).reshape(-1, 2), importance)


# --------------------------------------------------------------------------
# ensemble

@dataclass
class TreeEnsemble:
    trees: list[Tree]
    seeds: list[int]
    feature_names: tuple[str, ...]
    max_depth: int = 6
    min_leaf: int = 2

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def votes(self, X) -> np.ndarray:
        X = self._check(X)
        return np.sum([t.predict(X) for t in self.trees], axis=0)

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting alarming."""
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        v = self.votes(X)
        return (2 * v >= len(self.trees)).astype(np.int64)  # ties go to alarming

    def to_config(self) -> dict:
        return {"format": "mesodiff-tree-ensemble/1", "feature_names": list(self.feature_names),
                "max_depth": self.max_depth, "min_leaf": self.min_leaf, "seeds": list(self.seeds),
                "trees": [t.to_config() for t in self.trees]}

    @classmethod
    def from_config(cls, cfg) -> "TreeEnsemble":
        return cls([Tree.from_config(t) for t in cfg["trees"]], [int(s) for s in cfg["seeds"]],
                   tuple(cfg["feature_names"]), int(cfg["max_depth"]), int(cfg["min_leaf"]))


def save_ensemble(ens: TreeEnsemble, path) -> None:
    with open(path, "w") as fh:
        json.dump(ens.to_config(), fh, sort_keys=True)


def load_ensemble(path) -> TreeEnsemble:
    with open(path) as fh:
        return TreeEnsemble.from_config(json.load(fh))


def train_ensemble(data: Dataset, B: int = 100, max_depth: int = 6, min_leaf: int = 2,
                   seed: int = 0, allow_single_class: bool = False) -> TreeEnsemble:
    """B trees on bootstrap resamples (tree b uses ``stream(seed, b)``).

    Single-class data raises unless ``allow_single_class``, which yields
    one-leaf trees predicting the constant.
    """
    if len(data) == 0:
        raise ValueError("cannot train on empty data")
    if B < 1:
        raise ValueError("B must be at least 1")
    if len(np.unique(data.y)) < 2 and not allow_single_class:
        raise ValueError("training data contains a single class")
    n = len(data)
    trees, seeds = [], []
    for b in range(B):
        rng = stream(seed, b)
        w = np.bincount(rng.integers(0, n, size=n), minlength=n)
        trees.append(fit_tree(data.X, data.y, max_depth, min_leaf, w))
        seeds.append(b)
    return TreeEnsemble(trees, seeds, data.feature_names, max_depth, min_leaf)


def importance_vector(ens: TreeEnsemble) -> np.ndarray:
    """Mean impurity decrease per feature, normalized to sum 1 (zeros if no split)."""
    raw = np.mean([t.importance for t in ens.trees], axis=0)
    total = raw.sum()
    return raw / total if total > 0 else raw


def feature_importance(ens: TreeEnsemble) -> list[tuple[str, float]]:
    """Features by decreasing importance; equal values keep index order."""
    imp = importance_vector(ens)
    order = sorted(range(len(imp)), key=lambda i: (-imp[i], i))
    return [(ens.feature_names[i], float(imp[i])) for i in order]


# --------------------------------------------------------------------------
# cross-validation

@dataclass
class CVReport:
    n_folds: int
    fold_accuracy: list[float]
    importance: np.ndarray
    feature_names: tuple[str, ...]
    predictions: np.ndarray = field(repr=False, default=None)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    def ranked_importance(self) -> list[tuple[str, float]]:
        order = sorted(range(len(self.importance)), key=lambda i: (-self.importance[i], i))
        return [(self.feature_names[i], float(self.importance[i])) for i in order]

    def rank_of(self, name: str) -> int:
        """1-based importance rank of a feature."""
        return [n for n, _ in self.ranked_importance()].index(name) + 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["section", "key", "value"])
            for k, a in enumerate(self.fold_accuracy):
                w.writerow(["fold_accuracy", k, repr(float(a))])
            w.writerow(["mean_accuracy", "", repr(self.mean_accuracy)])
            for name, v in self.ranked_importance():
                w.writerow(["importance", name, repr(v)])


def fold_assignment(y, n_folds: int, seed: int, stratify: bool = False) -> np.ndarray:
    """Random equal-size folds; remainder rows go round-robin."""
    n = len(y)
    rng = stream(seed, 0)
    if stratify:
        order = np.concatenate([rng.permutation(np.flatnonzero(np.asarray(y) == c)) for c in (0, 1)])
    else:
        order = rng.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % n_folds
    return folds


def cross_validate(data: Dataset, n_folds: int = 10, B: int = 100, max_depth: int = 6,
                   min_leaf: int = 2, seed: int = 0, stratify: bool = False) -> CVReport:
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n_folds > len(data):
        raise ValueError(f"{n_folds} folds exceed {len(data)} rows")
    folds = fold_assignment(data.y, n_folds, seed, stratify)
    accs, imps = [], []
    pred = np.zeros(len(data), dtype=np.int64)
    for k in range(n_folds):
        test = folds == k
        ens = train_ensemble(data.subset(~test), B, max_depth, min_leaf, seed=int(stream(seed, 1, k).integers(2**62)))
        pred[test] = ens.predict(data.X[test])
        accs.append(float(np.mean(pred[test] == data.y[test])))
        imps.append(importance_vector(ens))
    imp = np.mean(imps, axis=0)
    if imp.sum() > 0:
        imp = imp / imp.sum()
    return CVReport(n_folds, accs, imp, data.feature_names, pred)
