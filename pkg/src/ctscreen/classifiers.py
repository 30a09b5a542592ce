"""Two-class classifiers written against numpy: NB, KNN, CART, random forest, linear SVM.

All share one contract: ``fit(algorithm, X, y, hp, seed)`` returns a
:class:`TrainedModel`; ``predict`` / ``predict_batch`` give labels plus a
real-valued score. Positive class is ``covid`` (encoded as 1).

Scores per algorithm:

* ``nb``  - posterior probability of covid, label covid iff score >= 0.5
* ``knn`` - fraction of the k neighbours that are covid, threshold 0.5
* ``dt``  - covid fraction in the reached leaf, threshold 0.5
* ``rf``  - fraction of trees voting covid, threshold 0.5
* ``svm`` - signed margin ``w . x + b``, threshold 0
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .imageio import LABELS, POSITIVE_LABEL

ALGORITHMS = ("nb", "knn", "dt", "rf", "svm")
MODEL_FORMAT_VERSION = 1

DEFAULT_HP: dict[str, dict[str, Any]] = {
    "nb": {"var_floor": 1e-9},
    "knn": {"k": 5},
    "dt": {"max_depth": 10, "min_leaf": 2},
    "rf": {"n_trees": 100, "max_depth": 10, "min_leaf": 2, "max_features": "sqrt"},
    "svm": {"lam": 1e-4, "epochs": 200, "eta0": 0.1},
}
DECISION_THRESHOLD = {"nb": 0.5, "knn": 0.5, "dt": 0.5, "rf": 0.5, "svm": 0.0}
NORMALIZED = {"knn", "svm"}


def encode_labels(y) -> np.ndarray:
    """Map labels to {0, 1}; accepts 'normal'/'covid' strings, bools or 0/1."""
    arr = np.asarray(y)
    if arr.dtype.kind in "US" or arr.dtype == object:
        bad = set(arr.tolist()) - set(LABELS)
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")
        return (arr == POSITIVE_LABEL).astype(int)
    out = arr.astype(int)
    if not set(np.unique(out)) <= {0, 1}:
        raise ValueError("numeric labels must be 0 or 1")
    return out


def decode_label(v: int) -> str:
    return POSITIVE_LABEL if v else "normal"


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        return cls(mean=X.mean(axis=0), std=np.maximum(X.std(axis=0), 1e-12))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


@dataclass(frozen=True)
class Prediction:
    label: str
    score: float


# --- decision trees ----------------------------------------------------------

def _best_split(X, y, features, min_leaf):
    """Lowest weighted Gini split over ``features``; returns (feature, threshold) or None."""
    n = y.size
    n_pos = int(y.sum())
    best = (math.inf, None, None)
    parent = n - (n_pos**2 + (n - n_pos) ** 2) / n
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left_pos = np.cumsum(y[order])[:-1]
        left_n = np.arange(1, n)
        # a split is only possible between distinct values
        ok = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not ok.any():
            continue
        ln, lp = left_n[ok].astype(float), left_pos[ok].astype(float)
        rn, rp = n - ln, n_pos - lp
        # n * weighted Gini = sum over children of (m - (pos^2 + neg^2) / m)
        impurity = (ln - (lp**2 + (ln - lp) ** 2) / ln) + (rn - (rp**2 + (rn - rp) ** 2) / rn)
        k = int(np.argmin(impurity))
        if impurity[k] < best[0] - 1e-12:
            pos = np.flatnonzero(ok)[k]
            best = (impurity[k], f, 0.5 * (xs[pos] + xs[pos + 1]))
    if best[1] is None or best[0] >= parent - 1e-12:
        return None
    return best[1], best[2]


@dataclass
class Tree:
    """Flat binary tree; leaves have ``feature == -1`` and carry a covid fraction."""

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def _add(self, feature=-1, threshold=0.0, value=0.0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    @classmethod
    def grow(cls, X, y, max_depth, min_leaf, n_sub=None, rng=None) -> "Tree":
        tree = cls()
        d = X.shape[1]
        stack = [(np.arange(y.size), 0, tree._add())]
        while stack:
            idx, depth, node = stack.pop()
            yy = y[idx]
            tree.value[node] = float(yy.mean())
            if depth >= max_depth or yy.min() == yy.max() or idx.size < 2 * min_leaf:
                continue
            if n_sub is None:
                feats = range(d)
            else:
                feats = np.sort(rng.choice(d, size=n_sub, replace=False))
            split = _best_split(X[idx], yy, feats, min_leaf)
            if split is None:
                continue
            f, thr = split
            go_left = X[idx, f] <= thr
            tree.feature[node] = int(f)
            tree.threshold[node] = float(thr)
            li, ri = tree._add(), tree._add()
            tree.left[node], tree.right[node] = li, ri
            stack.append((idx[~go_left], depth + 1, ri))
            stack.append((idx[go_left], depth + 1, li))
        return tree

    def predict(self, X: np.ndarray) -> np.ndarray:
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=int)
        active = feat[node] >= 0
        while active.any():
            i = np.flatnonzero(active)
            n = node[i]
            go_left = X[i, feat[n]] <= thr[n]
            node[i] = np.where(go_left, left[n], right[n])
            active = feat[node] >= 0
        return np.asarray(self.value)[node]

    def depth(self) -> int:
        def rec(k):
            return 0 if self.feature[k] < 0 else 1 + max(rec(self.left[k]), rec(self.right[k]))

        return rec(0)

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(**{k: list(v) for k, v in d.items()})


def _n_sub(max_features, d: int) -> int:
    if max_features == "sqrt":
        return max(1, math.isqrt(d))
    return max(1, min(d, int(max_features)))


# --- training ----------------------------------------------------------------

def _fit_nb(X, y, hp):
    params = {}
    for c in (0, 1):
        Xc = X[y == c]
        params[f"mean{c}"] = Xc.mean(axis=0)
        params[f"var{c}"] = np.maximum(Xc.var(axis=0), hp["var_floor"])
        params[f"prior{c}"] = Xc.shape[0] / X.shape[0]
    return params


def _score_nb(p, X):
    ll = []
    for c in (0, 1):
        m, v = p[f"mean{c}"], p[f"var{c}"]
        ll.append(
            math.log(p[f"prior{c}"])
            - 0.5 * np.sum(np.log(2 * math.pi * v) + (X - m) ** 2 / v, axis=1)
        )
    # P(covid | x) = 1 / (1 + exp(ll0 - ll1)), computed stably
    diff = ll[0] - ll[1]
    return np.exp(-np.logaddexp(0.0, diff))


def _fit_knn(X, y, hp):
    k = int(hp["k"])
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be a positive odd number, got {k}")
    return {"X": X.copy(), "y": y.copy(), "k": k}


def _score_knn(p, X):
    k = min(p["k"], p["X"].shape[0])
    d2 = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ p["X"].T
        + np.sum(p["X"] ** 2, axis=1)[None, :]
    )
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return p["y"][nearest].mean(axis=1)


def _fit_svm(X, y, hp, seed):
    """Averaged SGD on the primal hinge + L2 objective.

    Step size ``eta0 / (1 + eta0 * lam * t)``; the bias is unregularized.
    Returns the averaged weights and the per-epoch objective of the average.
    """
    lam, epochs, eta0 = float(hp["lam"]), int(hp["epochs"]), float(hp["eta0"])
    s = np.where(y == 1, 1.0, -1.0)
    n, d = X.shape
    w, b = np.zeros(d), 0.0
    w_avg, b_avg = np.zeros(d), 0.0
    rng = np.random.default_rng(seed)
    t = 0
    history = []
    for _ in range(epochs):
        for i in rng.permutation(n):
            eta = eta0 / (1.0 + eta0 * lam * t)
            margin = s[i] * (X[i] @ w + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * s[i] * X[i]
                b += eta * s[i]
            t += 1
            w_avg += (w - w_avg) / t
            b_avg += (b - b_avg) / t
        history.append(svm_objective(w_avg, b_avg, X, s, lam))
    return {"w": w_avg.copy(), "b": float(b_avg), "history": history}


def svm_objective(w, b, X, s, lam) -> float:
    hinge = np.maximum(0.0, 1.0 - s * (X @ w + b))
    return float(hinge.mean() + 0.5 * lam * w @ w)


def _fit_forest(X, y, hp, seed):
    n, d = X.shape
    n_sub = _n_sub(hp["max_features"], d)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(int(hp["n_trees"])):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        trees.append(Tree.grow(X[boot], y[boot], hp["max_depth"], hp["min_leaf"], n_sub, rng))
    return {"trees": trees}


@dataclass
class TrainedModel:
    algorithm: str
    hp: dict
    params: dict
    normalizer: Normalizer | None
    n_features: int
    seed: int = 0

    @property
    def threshold(self) -> float:
        return DECISION_THRESHOLD[self.algorithm]

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.normalizer is not None:
            X = self.normalizer.apply(X)
        a, p = self.algorithm, self.params
        if a == "nb":
            return _score_nb(p, X)
        if a == "knn":
            return _score_knn(p, X)
        if a == "dt":
            return p["tree"].predict(X)
        if a == "rf":
            votes = np.array([t.predict(X) >= 0.5 for t in p["trees"]])
            return votes.mean(axis=0)
        return X @ p["w"] + p["b"]

    def predict_codes(self, X) -> np.ndarray:
        return (self.scores(X) >= self.threshold).astype(int)

    # --- serialization ---

    def to_json(self) -> str:
        p = self.params
        if self.algorithm == "dt":
            params = {"tree": p["tree"].to_dict()}
        elif self.algorithm == "rf":
            params = {"trees": [t.to_dict() for t in p["trees"]]}
        else:
            params = {
                k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in p.items()
            }
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "algorithm": self.algorithm,
            "hyperparameters": self.hp,
            "seed": self.seed,
            "n_features": self.n_features,
            "normalizer": None
            if self.normalizer is None
            else {"mean": self.normalizer.mean.tolist(), "std": self.normalizer.std.tolist()},
            "params": params,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        doc = json.loads(text)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {doc.get('format_version')}")
        a = doc["algorithm"]
        raw = doc["params"]
        if a == "dt":
            params = {"tree": Tree.from_dict(raw["tree"])}
        elif a == "rf":
            params = {"trees": [Tree.from_dict(t) for t in raw["trees"]]}
        else:
            params = {k: (np.asarray(v) if isinstance(v, list) and k != "history" else v) for k, v in raw.items()}
        norm = doc["normalizer"]
        return cls(
            algorithm=a,
            hp=doc["hyperparameters"],
            params=params,
            normalizer=None if norm is None else Normalizer(np.asarray(norm["mean"]), np.asarray(norm["std"])),
            n_features=doc["n_features"],
            seed=doc["seed"],
        )


def resolve_hp(algorithm: str, hp: dict | None = None) -> dict:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    merged = dict(DEFAULT_HP[algorithm])
    for k, v in (hp or {}).items():
        if k not in merged:
            raise ValueError(f"unknown hyperparameter {k!r} for {algorithm}")
        merged[k] = v
    return merged


def fit(algorithm: str, X, y, hp: dict | None = None, seed: int = 0) -> TrainedModel:
    hp = resolve_hp(algorithm, hp)
    X = np.asarray(X, dtype=float)
    y = encode_labels(y)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"X must be (n, d) with n = len(y); got {X.shape} and {y.size}")
    if np.isnan(X).any():
        raise ValueError("training features contain NaN")
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise ValueError("training set contains a single class")
    if counts.min() < 2:
        raise ValueError("each class needs at least 2 training samples")

    normalizer = Normalizer.fit(X) if algorithm in NORMALIZED else None
    Xn = normalizer.apply(X) if normalizer is not None else X
    if algorithm == "nb":
        params = _fit_nb(Xn, y, hp)
    elif algorithm == "knn":
        params = _fit_knn(Xn, y, hp)
    elif algorithm == "dt":
        params = {"tree": Tree.grow(Xn, y, hp["max_depth"], hp["min_leaf"])}
    elif algorithm == "rf":
        params = _fit_forest(Xn, y, hp, seed)
    else:
        params = _fit_svm(Xn, y, hp, seed)
    return TrainedModel(algorithm, hp, params, normalizer, X.shape[1], seed)


def predict(model: TrainedModel, x) -> Prediction:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict takes a single feature vector; use predict_batch for matrices")
    score = float(model.scores(x[None, :])[0])
    return Prediction(label=decode_label(score >= model.threshold), score=score)


def predict_batch(model: TrainedModel, X) -> list[Prediction]:
    scores = model.scores(X)
    return [Prediction(decode_label(s >= model.threshold), float(s)) for s in scores]
