"""Gradient-boosted decision trees with a softmax objective, built in-repo.

One regression tree per class per boosting round, grown by exact greedy split
search over observed feature values with second-order (Newton) leaf weights
and L2 regularization. Everything is deterministic: fixed feature scan order,
first-strictly-better split wins, no subsampling.

Prediction is vectorized by packing all trees into flat node arrays and
walking them level by level for a whole batch at once, which is what keeps
the counterfactual search cheap.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .action import ActionClass
from .config import TreesConfig
from .observation import N_FEATURES, FilteredObs, feature_schema

N_CLASSES = 3


class EmptyDataset(ValueError):
    """fit() requires at least one labeled observation."""


class UnfittedModel(RuntimeError):
    """Prediction requested from a model with no trees."""


@dataclass(frozen=True)
class LabeledObs:
    """One classifier training example: flattened observation plus its label."""

    features: tuple[float, ...]
    label: int

    def __post_init__(self):
        if int(self.label) not in (0, 1, 2):
            raise ValueError(f"label must be one of 0/1/2, got {self.label}")


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0


@dataclass
class TreeModel:
    trees: list[list[TreeNode]] = field(default_factory=list)  # round-major, class-minor
    learning_rate: float = 0.1
    n_rounds: int = 0
    max_depth: int = 0
    min_leaf: int = 0
    reg_lambda: float = 1.0
    feature_schema: list[dict] = field(default_factory=feature_schema)
    train_loss_curve: list[float] = field(default_factory=list)
    _packed: "_PackedForest | None" = field(default=None, repr=False, compare=False)

    def packed(self) -> "_PackedForest":
        if not self.trees:
            raise UnfittedModel("model has no trees; call fit() or load() first")
        if self._packed is None:
            self._packed = _PackedForest(self.trees)
        return self._packed


class _PackedForest:
    """All trees as rectangular arrays for batch traversal."""

    def __init__(self, trees: list[list[TreeNode]]):
        n_trees = len(trees)
        width = max(len(t) for t in trees)
        self.feature = np.full((n_trees, width), -1, dtype=np.int32)
        self.threshold = np.zeros((n_trees, width))
        self.left = np.zeros((n_trees, width), dtype=np.int32)
        self.right = np.zeros((n_trees, width), dtype=np.int32)
        self.value = np.zeros((n_trees, width))
        self.depth = 0
        for t, nodes in enumerate(trees):
            for i, nd in enumerate(nodes):
                self.feature[t, i] = nd.feature
                self.threshold[t, i] = nd.threshold
                self.left[t, i] = nd.left
                self.right[t, i] = nd.right
                self.value[t, i] = nd.value
            self.depth = max(self.depth, _tree_depth(nodes))
        self._tree_ix = np.arange(n_trees)

    def raw_scores(self, X: np.ndarray, learning_rate: float) -> np.ndarray:
        """(n, n_classes) summed leaf scores; trees are round-major, class-minor."""
        n = X.shape[0]
        idx = np.zeros((n, self.feature.shape[0]), dtype=np.int32)
        for _ in range(self.depth):
            feat = self.feature[self._tree_ix[None, :], idx]
            leaf = feat < 0
            xv = X[np.arange(n)[:, None], np.maximum(feat, 0)]
            go_left = xv < self.threshold[self._tree_ix[None, :], idx]
            nxt = np.where(go_left, self.left[self._tree_ix[None, :], idx],
                           self.right[self._tree_ix[None, :], idx])
            idx = np.where(leaf, idx, nxt)
        leaf_vals = self.value[self._tree_ix[None, :], idx]
        per_class = leaf_vals.reshape(n, -1, N_CLASSES).sum(axis=1)
        return learning_rate * per_class


def _tree_depth(nodes: list[TreeNode], i: int = 0) -> int:
    if nodes[i].feature < 0:
        return 0
    return 1 + max(_tree_depth(nodes, nodes[i].left), _tree_depth(nodes, nodes[i].right))


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _grow_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    max_depth: int,
    min_leaf: int,
    lam: float,
) -> list[TreeNode]:
    nodes: list[TreeNode] = []

    def leaf_value(rows: np.ndarray) -> float:
        return float(-g[rows].sum() / (h[rows].sum() + lam))

    def build(rows: np.ndarray, depth: int) -> int:
        my_index = len(nodes)
        nodes.append(TreeNode(value=leaf_value(rows)))
        if depth >= max_depth or rows.size < 2 * min_leaf:
            return my_index
        split = _best_split(X, g, h, rows, min_leaf, lam)
        if split is None:
            return my_index
        feat, thr = split
        mask = X[rows, feat] < thr
        left_rows, right_rows = rows[mask], rows[~mask]
        nodes[my_index].feature = feat
        nodes[my_index].threshold = thr
        nodes[my_index].left = build(left_rows, depth + 1)
        nodes[my_index].right = build(right_rows, depth + 1)
        return my_index

    build(np.arange(X.shape[0]), 0)
    return nodes


def _best_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, min_leaf: int, lam: float
) -> tuple[int, float] | None:
    """Exact greedy search; returns (feature, threshold) of the best positive-gain
    split at midpoints between consecutive distinct values, or None."""
    gr, hr = g[rows], h[rows]
    G, H = gr.sum(), hr.sum()
    base = G * G / (H + lam)
    n = rows.size
    best_gain = 0.0
    best: tuple[int, float] | None = None
    for feat in range(X.shape[1]):
        vals = X[rows, feat]
        order = np.argsort(vals, kind="stable")
        v_sorted = vals[order]
        # candidate split after position i (left = first i+1 samples)
        positions = np.nonzero(v_sorted[1:] > v_sorted[:-1])[0]
        if positions.size == 0:
            continue
        n_left = positions + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        positions = positions[ok]
        if positions.size == 0:
            continue
        g_cum = np.cumsum(gr[order])
        h_cum = np.cumsum(hr[order])
        GL, HL = g_cum[positions], h_cum[positions]
        GR, HR = G - GL, H - HL
        gains = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - base)
        j = int(np.argmax(gains))  # first occurrence wins on ties
        if gains[j] > best_gain + 1e-12:
            best_gain = float(gains[j])
            i = positions[j]
            best = (feat, float((v_sorted[i] + v_sorted[i + 1]) / 2.0))
    return best


def fit(dataset, hyper: TreesConfig | None = None) -> TreeModel:
    """Boost softmax trees on (features, label) pairs.

    `dataset` is a sequence of objects with `.features` (length-25 vector) and
    `.label` (ActionClass or int), or a tuple (X, y) of arrays.
    """
    hyper = hyper or TreesConfig()
    if isinstance(dataset, tuple):
        X, y = dataset
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    else:
        records = list(dataset)
        if not records:
            raise EmptyDataset("cannot fit on an empty dataset")
        X = np.asarray([np.asarray(r.features, dtype=np.float64) for r in records])
        y = np.asarray([int(r.label) for r in records], dtype=np.int64)
    if X.size == 0:
        raise EmptyDataset("cannot fit on an empty dataset")
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"expected features of width {N_FEATURES}, got {X.shape}")

    n = X.shape[0]
    onehot = np.zeros((n, N_CLASSES))
    onehot[np.arange(n), y] = 1.0

    model = TreeModel(
        learning_rate=hyper.learning_rate,
        n_rounds=hyper.n_rounds,
        max_depth=hyper.max_depth,
        min_leaf=hyper.min_leaf,
        reg_lambda=hyper.reg_lambda,
    )
    scores = np.zeros((n, N_CLASSES))
    for _ in range(hyper.n_rounds):
        p = _softmax(scores)
        for k in range(N_CLASSES):
            gk = p[:, k] - onehot[:, k]
            hk = np.maximum(p[:, k] * (1.0 - p[:, k]), 1e-12)
            nodes = _grow_tree(X, gk, hk, hyper.max_depth, hyper.min_leaf, hyper.reg_lambda)
            model.trees.append(nodes)
            scores[:, k] += hyper.learning_rate * _predict_tree(nodes, X)
        logp = scores - _logsumexp(scores)
        model.train_loss_curve.append(float(-(onehot * logp).sum() / n))
    return model


def _logsumexp(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=1, keepdims=True)
    return m + np.log(np.exp(scores - m).sum(axis=1, keepdims=True))


def _predict_tree(nodes: list[TreeNode], X: np.ndarray) -> np.ndarray:
    idx = np.zeros(X.shape[0], dtype=np.int64)
    feature = np.array([nd.feature for nd in nodes])
    threshold = np.array([nd.threshold for nd in nodes])
    left = np.array([nd.left for nd in nodes])
    right = np.array([nd.right for nd in nodes])
    value = np.array([nd.value for nd in nodes])
    depth = _tree_depth(nodes)
    for _ in range(depth):
        f = feature[idx]
        leaf = f < 0
        xv = X[np.arange(X.shape[0]), np.maximum(f, 0)]
        nxt = np.where(xv < threshold[idx], left[idx], right[idx])
        idx = np.where(leaf, idx, nxt)
    return value[idx]


def predict_scores_batch(model: TreeModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return model.packed().raw_scores(X, model.learning_rate)


def predict_proba_batch(model: TreeModel, X: np.ndarray) -> np.ndarray:
    return _softmax(predict_scores_batch(model, X))


def predict_class_batch(model: TreeModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba_batch(model, X), axis=1)


def _as_vector(o) -> np.ndarray:
    if isinstance(o, FilteredObs):
        return o.flatten()
    return np.asarray(o, dtype=np.float64)


def predict_proba(model: TreeModel, o) -> np.ndarray:
    """Class probability vector for one observation (sums to 1)."""
    return predict_proba_batch(model, _as_vector(o)[None, :])[0]


def predict_class(model: TreeModel, o) -> ActionClass:
    """Argmax class; ties resolve to the lower class index."""
    return ActionClass(int(np.argmax(predict_proba(model, o))))


def save(model: TreeModel, path: str | Path) -> None:
    doc = {
        "version": 1,
        "kind": "boosted-trees-softmax",
        "hyper": {
            "learning_rate": model.learning_rate,
            "n_rounds": model.n_rounds,
            "max_depth": model.max_depth,
            "min_leaf": model.min_leaf,
            "reg_lambda": model.reg_lambda,
        },
        "feature_schema": model.feature_schema,
        "train_loss_curve": model.train_loss_curve,
        "trees": [
            [[nd.feature, nd.threshold, nd.left, nd.right, nd.value] for nd in tree]
            for tree in model.trees
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load(path: str | Path) -> TreeModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "boosted-trees-softmax":
        raise ValueError(f"not a tree model file: {path}")
    hyper = doc["hyper"]
    model = TreeModel(
        trees=[
            [TreeNode(int(f), float(t), int(l), int(r), float(v)) for f, t, l, r, v in tree]
            for tree in doc["trees"]
        ],
        learning_rate=hyper["learning_rate"],
        n_rounds=hyper["n_rounds"],
        max_depth=hyper["max_depth"],
        min_leaf=hyper["min_leaf"],
        reg_lambda=hyper["reg_lambda"],
        feature_schema=doc["feature_schema"],
        train_loss_curve=doc.get("train_loss_curve", []),
    )
    return model
