"""Logistic regression, CART and random forest over flat feature vectors."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step
from .sequencing import SequenceDataset, SequenceSample


def flatten_sequence(sample: SequenceSample | np.ndarray) -> np.ndarray:
    """Row-major concatenation of the window's feature vectors."""
    w = sample.window if isinstance(sample, SequenceSample) else np.asarray(sample)
    return w.reshape(-1)


def flatten_dataset(ds: SequenceDataset) -> np.ndarray:
    return ds.X.reshape(len(ds), -1)


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


# --------------------------------------------------------------------------
# logistic regression


@dataclass
class LogisticConfig:
    C: float = 100.0
    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 2048
    seed: int = 0


@dataclass
class LogisticModel:
    w: np.ndarray
    b: float
    config: LogisticConfig | None = None

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.decision_function(X)
        return np.exp(-np.logaddexp(0.0, -z))


def train_logistic(X: np.ndarray, y: np.ndarray, config: LogisticConfig | None = None,
                   history: list | None = None) -> LogisticModel:
    """L2-penalised logistic regression fitted with Adam.

    Objective: mean log-loss + ||w||^2 / (2 C n); ``C = inf`` disables the penalty.
    """
    config = config or LogisticConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.isfinite(X).all():
        raise ValueError("logistic regression needs finite inputs")
    n, d = X.shape
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x106]))
    params = {"w": np.zeros(d), "b": np.zeros(1)}
    state = AdamState.zeros_like(params)
    lam = 0.0 if math.isinf(config.C) else 1.0 / (config.C * n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for a in range(0, n, config.batch_size):
            idx = order[a:a + config.batch_size]
            z = X[idx] @ params["w"] + params["b"][0]
            p = np.exp(-np.logaddexp(0.0, -z))
            r = (p - y[idx]) / len(idx)
            grads = {"w": X[idx].T @ r + lam * params["w"], "b": np.array([r.sum()])}
            adam_step(params, grads, state, config.lr)
        if not np.isfinite(params["w"]).all():
            raise FloatingPointError(f"logistic regression diverged; lower lr (now {config.lr})")
        if history is not None:
            history.append(params["w"].copy())
    return LogisticModel(params["w"], float(params["b"][0]), config)


# --------------------------------------------------------------------------
# CART


@dataclass
class TreeConfig:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: int | str | None = None  # int, "auto"/"sqrt", or None for all
    seed: int = 0


@dataclass
class Tree:
    """Flat binary tree.  ``feature[k] == -1`` marks a leaf; go left when x <= threshold."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # fraud probability at each node
    n_samples: np.ndarray

    @property
    def depth(self) -> int:
        def rec(k):
            return 0 if self.feature[k] < 0 else 1 + max(rec(self.left[k]), rec(self.right[k]))
        return rec(0)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {f"{prefix}{k}": getattr(self, k) for k in
                ("feature", "threshold", "left", "right", "value", "n_samples")}

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray], prefix: str = "") -> "Tree":
        return cls(*(t[f"{prefix}{k}"] for k in ("feature", "threshold", "left", "right", "value", "n_samples")))


def _n_features(rule, d: int) -> int:
    if rule is None:
        return d
    if isinstance(rule, str):
        if rule in ("auto", "sqrt"):
            return max(1, int(math.sqrt(d)))
        raise ValueError(f"unknown max_features rule {rule!r}")
    return max(1, min(int(rule), d))


def best_split(X: np.ndarray, y: np.ndarray, features, min_samples_leaf: int = 1):
    """Lowest weighted-Gini split over midpoints between consecutive distinct values.

    Returns ``(feature, threshold, weighted_gini)`` or ``None``.  Ties go to the
    lowest feature index, then the lowest threshold.
    """
    n = len(y)
    total_pos = y.sum()
    # equal splits can differ by rounding; treat them as ties so the ordering rule decides
    tol = 1e-12 * n
    best = None
    best_score = math.inf
    for f in sorted(features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        # candidate cut after position k (left = first k+1 samples)
        distinct = xs[1:] > xs[:-1]
        n_left = np.arange(1, n)
        valid = distinct & (n_left >= min_samples_leaf) & (n - n_left >= min_samples_leaf)
        if not valid.any():
            continue
        pos_left = np.cumsum(ys)[:-1]
        n_right = n - n_left
        pos_right = total_pos - pos_left
        # n * weighted gini = sum over sides of (n_s - (pos_s^2 + neg_s^2) / n_s)
        neg_left = n_left - pos_left
        neg_right = n_right - pos_right
        score = (n_left - (pos_left ** 2 + neg_left ** 2) / n_left
                 + n_right - (pos_right ** 2 + neg_right ** 2) / n_right)
        score = np.where(valid, score, math.inf)
        k = int(np.flatnonzero(score <= score.min() + tol)[0])
        if score[k] < best_score - tol:
            best_score = score[k]
            best = (int(f), float((xs[k] + xs[k + 1]) / 2.0))
    if best is None:
        return None
    return best[0], best[1], float(best_score / n)


def train_tree(X: np.ndarray, y: np.ndarray, config: TreeConfig | None = None,
               rng: np.random.Generator | None = None) -> Tree:
    """Greedy CART with Gini impurity."""
    config = config or TreeConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("a tree needs at least one sample")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EE]))
    d = X.shape[1]
    k_feat = _n_features(config.max_features, d)
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        pure = ys.min() == ys.max()
        if pure or (config.max_depth is not None and depth >= config.max_depth) \
                or len(idx) < 2 * config.min_samples_leaf:
            continue
        feats = np.arange(d) if k_feat >= d else rng.choice(d, size=k_feat, replace=False)
        split = best_split(X[idx], ys, feats, config.min_samples_leaf)
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64), np.array(count, dtype=np.int64))


# --------------------------------------------------------------------------
# random forest


@dataclass
class ForestConfig:
    n_estimators: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 100
    bootstrap: bool = True
    max_features: int | str | None = "auto"
    seed: int = 0


@dataclass
class Forest:
    trees: list[Tree] = field(default_factory=list)
    config: ForestConfig | None = None

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("empty forest")
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


def train_forest(X: np.ndarray, y: np.ndarray, config: ForestConfig | None = None) -> Forest:
    config = config or ForestConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    tcfg = TreeConfig(config.max_depth, config.min_samples_leaf, config.max_features)
    seeds = np.random.SeedSequence([config.seed, 0xF0]).spawn(config.n_estimators)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        trees.append(train_tree(X[idx], y[idx], tcfg, rng))
    return Forest(trees, config)


# --------------------------------------------------------------------------
# checkpoints


def save_baseline(model, path) -> None:
    if isinstance(model, LogisticModel):
        save_checkpoint(path, "logit", {"w": model.w, "b": np.array([model.b])},
                        {"config": dataclasses.asdict(model.config) if model.config else None})
    elif isinstance(model, Tree):
        save_checkpoint(path, "dt", model.to_tensors(), {})
    elif isinstance(model, Forest):
        tensors = {}
        for k, t in enumerate(model.trees):
            tensors.update(t.to_tensors(f"tree{k:04d}."))
        save_checkpoint(path, "rf", tensors, {"n_trees": len(model.trees),
                                             "config": dataclasses.asdict(model.config) if model.config else None})
    else:
        raise TypeError(f"cannot save {type(model).__name__}")


def load_baseline(path):
    kind, t, meta = load_checkpoint(path)
    if kind == "logit":
        cfg = LogisticConfig(**meta["config"]) if meta.get("config") else None
        return LogisticModel(t["w"], float(t["b"][0]), cfg)
    if kind == "dt":
        return Tree.from_tensors(t)
    if kind == "rf":
        cfg = ForestConfig(**meta["config"]) if meta.get("config") else None
        return Forest([Tree.from_tensors(t, f"tree{k:04d}.") for k in range(meta["n_trees"])], cfg)
    raise ValueError(f"{path} holds a {kind!r} model, not a baseline")
