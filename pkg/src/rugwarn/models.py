"""Logistic regression baseline and random forest main model.

Both train on a plain float matrix and emit probabilities in [0, 1]. All
randomness comes from ``numpy.random.PCG64`` streams spawned from one
``SeedSequence(seed)``, one stream per tree, so the forest is identical
whether trees are built sequentially or on a thread pool.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ColumnMismatch, NonFiniteFeature, SingleClassTraining

ARTIFACT_VERSION = 1
LOGREG = "logreg"
RANDOM_FOREST = "random_forest"


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return cls(X.mean(axis=0), std)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass
class DecisionTree:
    """Array-backed binary tree; node 0 is the root, ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    positive: np.ndarray
    total: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def leaf_probability(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.total > 0, self.positive / self.total, 0.0)

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.left[node] >= 0
        while active.any():
            idx = rows[active]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.left[node] >= 0
        return self.leaf_probability()[node]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "positive": self.positive.tolist(),
            "total": self.total.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=np.float64),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            positive=np.array(d["positive"], dtype=np.float64),
            total=np.array(d["total"], dtype=np.float64),
        )


@dataclass
class TrainedModel:
    kind: str
    feature_columns: list[str]
    seed: int = 0
    threshold: float = 0.5
    weights: np.ndarray | None = None
    bias: float = 0.0
    scaler: Scaler | None = None
    trees: list[DecisionTree] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def predict_proba(self, X, columns=None):
        return predict_proba(self, X, columns)

    def to_dict(self):
        d = {
            "version": ARTIFACT_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "threshold": self.threshold,
            "feature_columns": list(self.feature_columns),
            "params": self.params,
        }
        if self.kind == LOGREG:
            d["weights"] = self.weights.tolist()
            d["bias"] = self.bias
            d["scaler"] = {"mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()}
        else:
            d["trees"] = [t.to_dict() for t in self.trees]
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported model artifact version {d.get('version')!r}")
        model = cls(
            kind=d["kind"],
            feature_columns=list(d["feature_columns"]),
            seed=d["seed"],
            threshold=d["threshold"],
            params=d.get("params", {}),
        )
        if model.kind == LOGREG:
            model.weights = np.array(d["weights"], dtype=np.float64)
            model.bias = float(d["bias"])
            model.scaler = Scaler(np.array(d["scaler"]["mean"]), np.array(d["scaler"]["std"]))
        elif model.kind == RANDOM_FOREST:
            model.trees = [DecisionTree.from_dict(t) for t in d["trees"]]
        else:
            raise ValueError(f"unknown model kind {model.kind!r}")
        return model


def save_model(model: TrainedModel, path):
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")


def load_model(path) -> TrainedModel:
    return TrainedModel.from_dict(json.loads(Path(path).read_text()))


def _check_training(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if not np.isfinite(X).all():
        raise NonFiniteFeature("training matrix contains NaN or inf")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise SingleClassTraining("training labels contain a single class")
    return X, y.astype(np.int64)


def class_weights(y, mode=None):
    """Per-sample weights; ``balanced`` gives each class equal total weight."""
    y = np.asarray(y)
    if mode is None:
        return np.ones(len(y))
    if mode != "balanced":
        raise ValueError(f"unknown class weighting {mode!r}")
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    return np.where(y == 1, len(y) / (2.0 * n_pos), len(y) / (2.0 * n_neg))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def logreg_loss_grad(w, b, X, y, l2=0.0, sample_weight=None):
    """Mean (weighted) log-loss plus ``l2/2 * ||w||^2``, and its gradient in (w, b)."""
    z = X @ w + b
    sw = np.ones(len(y)) if sample_weight is None else sample_weight
    norm = sw.sum()
    # log(1 + e^z) - y z, overflow-safe
    loss = float(np.sum(sw * (np.logaddexp(0.0, z) - y * z)) / norm + 0.5 * l2 * (w @ w))
    resid = sw * (sigmoid(z) - y) / norm
    return loss, X.T @ resid + l2 * w, float(resid.sum())


def train_logreg(X, y, columns=None, seed=0, threshold=0.5, lr=0.1, max_epochs=5000, tol=1e-8, l2=0.0, class_weight=None):
    X, y = _check_training(X, y)
    scaler = Scaler.fit(X)
    Z = scaler.transform(X)
    sw = class_weights(y, class_weight)
    w = np.zeros(Z.shape[1])
    b = 0.0
    loss, gw, gb = logreg_loss_grad(w, b, Z, y, l2, sw)
    epochs = 0
    for epochs in range(1, max_epochs + 1):
        w = w - lr * gw
        b = b - lr * gb
        new_loss, gw, gb = logreg_loss_grad(w, b, Z, y, l2, sw)
        improvement = loss - new_loss
        loss = new_loss
        if improvement < tol:
            break
    return TrainedModel(
        kind=LOGREG,
        feature_columns=list(columns) if columns is not None else [f"x{i}" for i in range(X.shape[1])],
        seed=seed,
        threshold=threshold,
        weights=w,
        bias=float(b),
        scaler=scaler,
        params={"lr": lr, "max_epochs": max_epochs, "tol": tol, "l2": l2, "class_weight": class_weight,
                "epochs_run": epochs, "final_loss": loss},
    )


def _best_split(Xn, yn, wn, features, min_leaf=1):
    """Lowest weighted Gini over midpoints of the candidate features.

    Ties resolve to the lowest feature index, then the lowest threshold.
    Returns ``(feature, threshold)`` or None when no admissible cut exists.
    """
    best = None
    best_score = math.inf
    m = len(yn)
    total_w = wn.sum()
    total_pos = (wn * yn).sum()
    n_left = np.arange(1, m)
    for f in sorted(features):
        order = np.argsort(Xn[:, f], kind="stable")
        xs = Xn[order, f]
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
        if not valid.any():
            continue
        cw = np.cumsum(wn[order])[:-1]
        cp = np.cumsum((wn * yn)[order])[:-1]
        rw = total_w - cw
        rp = total_pos - cp
        # weight * gini = w - (p^2 + q^2) / w on each side
        left = cw - (cp**2 + (cw - cp) ** 2) / cw
        right = rw - (rp**2 + (rw - rp) ** 2) / rw
        score = np.where(valid, left + right, np.inf)
        k = int(np.argmin(score))
        if score[k] < best_score:
            best_score = score[k]
            best = (int(f), float((xs[k] + xs[k + 1]) / 2.0))
    return best


def build_tree(X, y, rng, max_depth=None, min_samples_leaf=1, mtry=None, sample_weight=None):
    """Grow one CART classification tree on (X, y) with per-node feature sampling."""
    n, d = X.shape
    mtry = d if mtry is None else max(1, min(mtry, d))
    sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    feature, threshold, left, right, positive, total = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        positive.append(float((sw[idx] * y[idx]).sum()))
        total.append(float(sw[idx].sum()))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        pos = positive[node]
        if pos == 0 or pos == total[node]:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if len(idx) < 2 * min_samples_leaf:
            continue
        candidates = rng.choice(d, size=mtry, replace=False) if mtry < d else np.arange(d)
        split = _best_split(X[idx], y[idx], sw[idx], candidates, min_samples_leaf)
        if split is None:
            continue
        f, t = split
        go_left = X[idx, f] <= t
        li = new_node(idx[go_left])
        ri = new_node(idx[~go_left])
        feature[node], threshold[node], left[node], right[node] = int(f), float(t), li, ri
        # right first so the left subtree is numbered before it
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))
    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        positive=np.array(positive, dtype=np.float64),
        total=np.array(total, dtype=np.float64),
    )


def bootstrap_indices(rng, n):
    return rng.integers(0, n, size=n)


def train_random_forest(X, y, columns=None, seed=0, threshold=0.5, n_trees=100, max_depth=None,
                        min_samples_leaf=1, mtry=None, class_weight=None, threads=1):
    X, y = _check_training(X, y)
    n, d = X.shape
    mtry = max(1, int(math.floor(math.sqrt(d)))) if mtry is None else mtry
    sw = class_weights(y, class_weight)
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n_trees)]

    def grow(rng):
        boot = bootstrap_indices(rng, n)
        return build_tree(X[boot], y[boot], rng, max_depth, min_samples_leaf, mtry, sw[boot])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, streams))
    else:
        trees = [grow(rng) for rng in streams]
    return TrainedModel(
        kind=RANDOM_FOREST,
        feature_columns=list(columns) if columns is not None else [f"x{i}" for i in range(d)],
        seed=seed,
        threshold=threshold,
        trees=trees,
        params={"n_trees": n_trees, "max_depth": max_depth, "min_samples_leaf": min_samples_leaf,
                "mtry": mtry, "class_weight": class_weight, "bootstrap": "n draws with replacement"},
    )


def _as_matrix(model, X, columns):
    if columns is not None and list(columns) != list(model.feature_columns):
        raise ColumnMismatch(f"expected columns {model.feature_columns}, got {list(columns)}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != len(model.feature_columns):
        raise ColumnMismatch(f"expected {len(model.feature_columns)} columns, got {X.shape[1]}")
    return X


def predict_proba(model: TrainedModel, X, columns=None) -> np.ndarray:
    X = _as_matrix(model, X, columns)
    if model.kind == LOGREG:
        return sigmoid(model.scaler.transform(X) @ model.weights + model.bias)
    if not model.trees:
        raise ValueError("forest has no trees")
    return np.mean([t.predict_proba(X) for t in model.trees], axis=0)


def warn(model: TrainedModel, X, columns=None, threshold=None):
    """Warning flags: score strictly above the threshold."""
    tau = model.threshold if threshold is None else threshold
    return predict_proba(model, X, columns) > tau
