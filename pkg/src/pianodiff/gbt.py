"""Gradient-boosted decision trees with a 3-class softmax objective.

Exact greedy split enumeration with second-order gain and L2 leaf
regularization; row/column subsampling comes from a splitmix64 stream so a
(data, hyper, seed) triple always yields a byte-identical model.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError, ParseError, TrainingError
from .metrics import balanced_accuracy
from .rng import SplitMix64

N_CLASSES = 3
_EPS_DENOM = 1e-12


@dataclass(frozen=True)
class GbtHyperParams:
    rounds: int = 20
    max_depth: int = 3
    learning_rate: float = 0.3
    min_child_weight: float = 1.0
    subsample: float = 0.8
    colsample: float = 0.8
    l2_lambda: float = 1.0


# search ranges for the seven tunables
SEARCH_RANGES = {
    "rounds": (20, 300),
    "max_depth": (1, 8),
    "learning_rate": (0.02, 0.5),  # log-uniform
    "min_child_weight": (0.5, 8.0),
    "subsample": (0.5, 1.0),
    "colsample": (0.3, 1.0),
    "l2_lambda": (0.0, 5.0),
}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_hess(logits, label: int):
    """Gradient and diagonal Hessian of the multiclass log-loss."""
    if label not in (1, 2, 3):
        raise DataError(f"label must be in {{1,2,3}}, got {label}")
    p = softmax(np.asarray(logits, dtype=float))
    grad = p.copy()
    grad[label - 1] -= 1.0
    hess = p * (1.0 - p)
    return grad, hess


class Tree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        val = np.asarray(self.value)
        idx = np.zeros(X.shape[0], dtype=int)
        while True:
            f = feat[idx]
            internal = f >= 0
            if not internal.any():
                break
            col = np.where(internal, f, 0)
            go_left = X[np.arange(X.shape[0]), col] <= thr[idx]
            idx = np.where(internal, np.where(go_left, left[idx], right[idx]), idx)
        return val[idx]

    def depth(self) -> int:
        def node_depth(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(node_depth(self.left[i]), node_depth(self.right[i]))

        return node_depth(0) if self.feature else 0

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": self.value[i]}
        return {
            "feature": self.feature[i],
            "threshold": self.threshold[i],
            "left": self.to_dict(self.left[i]),
            "right": self.to_dict(self.right[i]),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        tree = cls()

        def build(node: dict) -> int:
            if "leaf" in node:
                return tree.add_leaf(node["leaf"])
            i = tree.add_split(node["feature"], node["threshold"])
            tree.left[i] = build(node["left"])
            tree.right[i] = build(node["right"])
            return i

        build(doc)
        return tree


class GbtModel:
    def __init__(self, trees, base_score, hyper: GbtHyperParams, seed: int, n_features: int):
        self.trees = trees  # [round][class] -> Tree
        self.base_score = np.asarray(base_score, dtype=float)
        self.hyper = hyper
        self.seed = seed
        self.n_features = n_features

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(
                f"input width {X.shape[1]} != training width {self.n_features}"
            )
        logits = np.tile(self.base_score, (X.shape[0], 1))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                logits[:, c] += tree.predict(X)
        return logits

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "seed": self.seed,
            "n_features": self.n_features,
            "hyper": asdict(self.hyper),
            "base_score": self.base_score.tolist(),
            "trees": [[t.to_dict() for t in rnd] for rnd in self.trees],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GbtModel":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ParseError(f"unsupported model version {doc.get('version')}")
        trees = [[Tree.from_dict(t) for t in rnd] for rnd in doc["trees"]]
        return cls(
            trees,
            np.array(doc["base_score"]),
            GbtHyperParams(**doc["hyper"]),
            doc["seed"],
            doc["n_features"],
        )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _leaf_value(G: float, H: float, hyper: GbtHyperParams) -> float:
    return -hyper.learning_rate * G / max(H + hyper.l2_lambda, _EPS_DENOM)


def _best_split(X, g, h, rows, cols, hyper):
    """Return (gain, feature, threshold, left_rows, right_rows) or None."""
    Xn = X[np.ix_(rows, cols)]
    order = np.argsort(Xn, axis=0, kind="stable")
    gs = np.take_along_axis(np.broadcast_to(g[rows, None], Xn.shape), order, axis=0)
    hs = np.take_along_axis(np.broadcast_to(h[rows, None], Xn.shape), order, axis=0)
    Xs = np.take_along_axis(Xn, order, axis=0)
    G = g[rows].sum()
    H = h[rows].sum()
    GL = np.cumsum(gs, axis=0)[:-1]
    HL = np.cumsum(hs, axis=0)[:-1]
    GR = G - GL
    HR = H - HL
    lam = hyper.l2_lambda
    parent = G * G / max(H + lam, _EPS_DENOM)
    gain = 0.5 * (
        GL ** 2 / np.maximum(HL + lam, _EPS_DENOM)
        + GR ** 2 / np.maximum(HR + lam, _EPS_DENOM)
        - parent
    )
    valid = (Xs[1:] > Xs[:-1]) & (HL >= hyper.min_child_weight) & (HR >= hyper.min_child_weight)
    gain = np.where(valid, gain, -np.inf)
    if not np.isfinite(gain).any():
        return None
    flat = int(np.argmax(gain))  # first occurrence: lowest split position, then feature
    k, j = flat // gain.shape[1], flat % gain.shape[1]
    best_gain = float(gain[k, j])
    if best_gain <= 0:
        return None
    threshold = float((Xs[k, j] + Xs[k + 1, j]) / 2.0)
    feature = int(cols[j])
    go_left = X[rows, feature] <= threshold
    return best_gain, feature, threshold, rows[go_left], rows[~go_left]


def _grow_tree(X, g, h, rows, cols, hyper) -> Tree:
    tree = Tree()

    def grow(rows, depth) -> int:
        G = g[rows].sum()
        H = h[rows].sum()
        if depth >= hyper.max_depth or len(rows) < 2:
            return tree.add_leaf(_leaf_value(G, H, hyper))
        found = _best_split(X, g, h, rows, cols, hyper)
        if found is None:
            return tree.add_leaf(_leaf_value(G, H, hyper))
        gain, feature, threshold, left_rows, right_rows = found
        assert gain >= 0.0
        node = tree.add_split(feature, threshold)
        tree.left[node] = grow(left_rows, depth + 1)
        tree.right[node] = grow(right_rows, depth + 1)
        return node

    grow(rows, 0)
    return tree


def fit_gbt(X, y, hyper: GbtHyperParams, seed: int = 0) -> GbtModel:
    """Train rounds x 3 trees on (vectors, labels in {1,2,3})."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise DataError("training set must be a nonempty (n, d) matrix with labels")
    n, d = X.shape
    classes = np.unique(y)
    if len(classes) == 1:
        warnings.warn(
            f"single-class training set (class {classes[0]}); model is constant",
            stacklevel=2,
        )
    priors = np.array([(y == c).mean() for c in (1, 2, 3)])
    base = np.log(np.maximum(priors, 1e-12))
    Y = np.zeros((n, N_CLASSES))
    Y[np.arange(n), y - 1] = 1.0

    rng = SplitMix64(seed)
    logits = np.tile(base, (n, 1))
    all_rows = np.arange(n)
    all_cols = np.arange(d)
    n_cols = max(1, math.ceil(hyper.colsample * d))
    trees: list[list[Tree]] = []
    for _ in range(hyper.rounds):
        P = softmax(logits)
        Gmat = P - Y
        Hmat = P * (1.0 - P)
        round_trees = []
        for c in range(N_CLASSES):
            if hyper.subsample < 1.0:
                mask = np.array([rng.uniform() < hyper.subsample for _ in range(n)])
                rows = all_rows[mask]
                if len(rows) == 0:
                    rows = all_rows
            else:
                rows = all_rows
            if n_cols < d:
                perm = list(range(d))
                rng.shuffle(perm)
                cols = np.array(sorted(perm[:n_cols]))
            else:
                cols = all_cols
            tree = _grow_tree(X, Gmat[:, c], Hmat[:, c], rows, cols, hyper)
            logits[:, c] += tree.predict(X)
            round_trees.append(tree)
        trees.append(round_trees)
    return GbtModel(trees, base, hyper, seed, d)


def predict_proba(model: GbtModel, x) -> np.ndarray:
    """Class probabilities for one vector or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    probs = softmax(model.raw_scores(np.atleast_2d(x)))
    return probs[0] if single else probs


def predict_score_avg(model: GbtModel, segments) -> np.ndarray:
    """Mean of per-window probability vectors across one score."""
    segments = np.asarray(segments, dtype=float)
    if segments.ndim != 2 or len(segments) == 0:
        raise DataError("score averaging requires at least one window")
    return predict_proba(model, segments).mean(axis=0)


# ---------------------------------------------------------------------------
# Random hyperparameter search with score-level stratified 5-fold CV
# ---------------------------------------------------------------------------


@dataclass
class WindowDataset:
    """Flattened windows with their weak labels and owning score ids."""

    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) in {1,2,3}
    score_ids: np.ndarray  # (n,) arbitrary hashables

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.score_ids = np.asarray(self.score_ids)
        if not (len(self.X) == len(self.y) == len(self.score_ids)):
            raise DataError("X, y and score_ids must align")


def _sample_config(rng: np.random.Generator) -> GbtHyperParams:
    lo, hi = SEARCH_RANGES["learning_rate"]
    return GbtHyperParams(
        rounds=int(rng.integers(SEARCH_RANGES["rounds"][0], SEARCH_RANGES["rounds"][1] + 1)),
        max_depth=int(rng.integers(SEARCH_RANGES["max_depth"][0], SEARCH_RANGES["max_depth"][1] + 1)),
        learning_rate=float(np.exp(rng.uniform(np.log(lo), np.log(hi)))),
        min_child_weight=float(rng.uniform(*SEARCH_RANGES["min_child_weight"])),
        subsample=float(rng.uniform(*SEARCH_RANGES["subsample"])),
        colsample=float(rng.uniform(*SEARCH_RANGES["colsample"])),
        l2_lambda=float(rng.uniform(*SEARCH_RANGES["l2_lambda"])),
    )


def score_level_folds(data: WindowDataset, n_folds: int, rng: np.random.Generator):
    """Assign every score (and hence all its windows) to one of n folds,
    stratified by the score label."""
    score_label: dict = {}
    for sid, label in zip(data.score_ids, data.y):
        score_label.setdefault(sid, int(label))
    fold_of: dict = {}
    for cls in sorted(set(score_label.values())):
        members = sorted([s for s, l in score_label.items() if l == cls], key=str)
        if len(members) < n_folds:
            raise TrainingError(
                f"class {cls} has {len(members)} scores; need >= {n_folds} for {n_folds}-fold CV"
            )
        members = list(np.array(members, dtype=object)[rng.permutation(len(members))])
        for i, sid in enumerate(members):
            fold_of[sid] = i % n_folds
    return np.array([fold_of[sid] for sid in data.score_ids])


def random_search(
    data: WindowDataset, n_configs: int = 50, seed: int = 0, n_folds: int = 5
):
    """Sample configs, cross-validate each, return the best and a report.

    Selection maximizes mean validation balanced accuracy over the folds
    (window level); ties go to the first sampled config.
    """
    if n_configs < 1:
        raise TrainingError("n_configs must be >= 1")
    rng = np.random.default_rng(seed)
    folds = score_level_folds(data, n_folds, rng)
    report = []
    best_idx, best_mean = 0, -np.inf
    for k in range(n_configs):
        hyper = _sample_config(rng)
        fold_scores = []
        for f in range(n_folds):
            val = folds == f
            model = fit_gbt(data.X[~val], data.y[~val], hyper, seed=seed * 1000 + f)
            pred = np.argmax(predict_proba(model, data.X[val]), axis=1) + 1
            fold_scores.append(balanced_accuracy(pred, data.y[val]))
        mean = float(np.mean(fold_scores))
        report.append({"hyper": asdict(hyper), "fold_scores": fold_scores, "mean": mean})
        if mean > best_mean:
            best_idx, best_mean = k, mean
    best = GbtHyperParams(**report[best_idx]["hyper"])
    return best, {"configs": report, "selected": best_idx}
