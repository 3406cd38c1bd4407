"""Regression-tree learners built from scratch.

Two ensemble families share one exact-greedy tree engine:

* a gradient-boosted ensemble minimizing squared error with an L2 leaf
  penalty (``reg_lambda``) and a per-leaf complexity penalty (``gamma``),
* a bootstrap random forest used for the imputation bake-off.

Split search is exact: every midpoint between consecutive distinct sorted
feature values is scored with the second-order gain

    0.5 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)) - gamma

and the optimal leaf weight is -G/(H+lambda). Ties in gain break toward
the lower feature index, then the lower threshold, so fits are fully
deterministic. Missing feature values are not supported; callers must
provide complete matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

# Guards against float-noise splits on mathematically zero-gain data.
_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class FitParams:
    """Hyperparameters for either learner family; seeds make fits reproducible."""

    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # forest only; None means ceil(m/3)
    bootstrap: bool = True                 # forest only
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees, max_depth, min_samples_leaf must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be >= 0")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")

    @classmethod
    def boosted_defaults(cls, seed: int = 0) -> "FitParams":
        return cls(seed=seed)

    @classmethod
    def forest_defaults(cls, seed: int = 0) -> "FitParams":
        return cls(n_trees=300, reg_lambda=0.0, gamma=0.0, seed=seed)

    def with_seed(self, seed: int) -> "FitParams":
        return replace(self, seed=seed)


class RegressionTree:
    """Flat-array binary tree; node 0 is the root.

    ``feature[i] == -1`` marks a leaf, whose prediction is ``weight[i]``.
    Rows with value <= threshold go left, otherwise right.
    """

    def __init__(
        self,
        feature: np.ndarray,
        threshold: np.ndarray,
        left: np.ndarray,
        right: np.ndarray,
        weight: np.ndarray,
        max_depth: int,
    ) -> None:
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.weight = np.asarray(weight, dtype=float)
        self.max_depth = max_depth
        internal = self.feature >= 0
        if np.any((self.left[internal] < 0) | (self.right[internal] < 0)):
            raise ValueError("internal node with missing child")

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int32)
        # Level-wise descent; depth is bounded so this loops at most max_depth times.
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            idx = np.where(internal)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
        return self.weight[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "weight": self.weight.tolist(),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.array(d["feature"]), np.array(d["threshold"]), np.array(d["left"]),
            np.array(d["right"]), np.array(d["weight"]), d["max_depth"],
        )


class _TreeBuilder:
    """Grows one tree on (gradients, hessians) with exact greedy splits."""

    def __init__(
        self,
        X: np.ndarray,
        g: np.ndarray,
        h: np.ndarray,
        params: FitParams,
        rng: np.random.Generator | None = None,
        features_per_split: int | None = None,
    ) -> None:
        self.X = X
        self.g = g
        self.h = h
        self.params = params
        self.rng = rng
        self.features_per_split = features_per_split
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.weight: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.weight.append(0.0)
        return len(self.feature) - 1

    def _candidate_features(self, m: int) -> np.ndarray:
        k = self.features_per_split
        if k is None or k >= m:
            return np.arange(m)
        # Sorted sample keeps the lower-feature-index tie rule meaningful.
        return np.sort(self.rng.choice(m, size=k, replace=False))

    def _leaf_weight(self, idx: np.ndarray) -> float:
        G = float(self.g[idx].sum())
        H = float(self.h[idx].sum())
        return -G / (H + self.params.reg_lambda)

    def _best_split(self, idx: np.ndarray) -> tuple[int, float, np.ndarray, np.ndarray] | None:
        lam = self.params.reg_lambda
        min_leaf = self.params.min_samples_leaf
        gs = self.g[idx]
        hs = self.h[idx]
        G = gs.sum()
        H = hs.sum()
        parent = G * G / (H + lam)
        best_gain = _GAIN_EPS
        best: tuple[int, float, np.ndarray] | None = None
        n = idx.size
        for j in self._candidate_features(self.X.shape[1]):
            xj = self.X[idx, j]
            order = np.argsort(xj, kind="stable")
            xs = xj[order]
            if xs[0] == xs[-1]:
                continue
            GL = np.cumsum(gs[order])[:-1]
            HL = np.cumsum(hs[order])[:-1]
            GR = G - GL
            HR = H - HL
            pos = np.arange(1, n)
            ok = (xs[:-1] < xs[1:]) & (pos >= min_leaf) & (n - pos >= min_leaf)
            if not ok.any():
                continue
            gains = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - self.params.gamma
            gains[~ok] = -np.inf
            p = int(np.argmax(gains))  # first max: lowest threshold wins ties
            if gains[p] > best_gain:
                best_gain = float(gains[p])
                best = (int(j), 0.5 * (xs[p] + xs[p + 1]), idx[order[: p + 1]])
        if best is None:
            return None
        j, thr, left_idx = best
        left_set = np.zeros(self.X.shape[0], dtype=bool)
        left_set[left_idx] = True
        right_idx = idx[~left_set[idx]]
        return j, thr, left_idx, right_idx

    def build(self, idx: np.ndarray) -> RegressionTree:
        root = self._new_node()
        stack = [(root, idx, 0)]
        while stack:
            node, rows, depth = stack.pop()
            split = None
            if depth < self.params.max_depth and rows.size >= 2 * self.params.min_samples_leaf:
                split = self._best_split(rows)
            if split is None:
                self.weight[node] = self._leaf_weight(rows)
                continue
            j, thr, left_rows, right_rows = split
            self.feature[node] = j
            self.threshold[node] = thr
            left = self._new_node()
            right = self._new_node()
            self.left[node] = left
            self.right[node] = right
            # Right pushed first so the left child is processed (and numbered) next.
            stack.append((right, right_rows, depth + 1))
            stack.append((left, left_rows, depth + 1))
        return RegressionTree(
            np.array(self.feature), np.array(self.threshold), np.array(self.left),
            np.array(self.right), np.array(self.weight), self.params.max_depth,
        )


def _validate_training_inputs(X: np.ndarray, g: np.ndarray, h: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if g.shape[0] != X.shape[0] or h.shape[0] != X.shape[0]:
        raise ValueError("gradients/hessians must match the row count")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise ValueError("non-finite gradient or hessian")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")


def fit_tree(
    features: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    params: FitParams,
) -> RegressionTree:
    """Fit a single tree to per-row gradients and hessians."""
    X = np.asarray(features, dtype=float)
    g = np.asarray(gradients, dtype=float)
    h = np.asarray(hessians, dtype=float)
    _validate_training_inputs(X, g, h)
    builder = _TreeBuilder(X, g, h, params)
    return builder.build(np.arange(X.shape[0]))


def _check_schema(model_schema: list[str] | None, feature_names: list[str] | None, width: int) -> None:
    if feature_names is None:
        if model_schema is not None and width != len(model_schema):
            raise ValueError(
                f"feature matrix has {width} columns, model expects {len(model_schema)}"
            )
        return
    if model_schema is None:
        raise ValueError("model carries no feature schema to check against")
    if feature_names != model_schema:
        missing = [f for f in model_schema if f not in feature_names]
        extra = [f for f in feature_names if f not in model_schema]
        raise ValueError(f"feature schema mismatch: missing {missing}, extra {extra}")


@dataclass
class BoostedEnsemble:
    """Additive tree model: base_score + learning_rate * sum of tree outputs."""

    trees: list[RegressionTree]
    learning_rate: float
    base_score: float
    reg_lambda: float
    gamma: float
    feature_schema: list[str] | None = None
    params: FitParams = field(default_factory=FitParams)

    def predict(self, features: np.ndarray, feature_names: list[str] | None = None) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        _check_schema(self.feature_schema, feature_names, X.shape[1])
        out = np.full(X.shape[0], self.base_score, dtype=float)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "boosted",
                "feature_schema": self.feature_schema,
                "base_score": self.base_score,
                "learning_rate": self.learning_rate,
                "reg_lambda": self.reg_lambda,
                "gamma": self.gamma,
                "params": _params_to_dict(self.params),
                "trees": [t.to_dict() for t in self.trees],
            }
        )


@dataclass
class RandomForestModel:
    """Bagged trees; the prediction is the mean of member-tree predictions."""

    trees: list[RegressionTree]
    features_per_split: int
    bootstrap: bool
    seed: int
    feature_schema: list[str] | None = None
    params: FitParams = field(default_factory=FitParams.forest_defaults)

    def predict(self, features: np.ndarray, feature_names: list[str] | None = None) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        _check_schema(self.feature_schema, feature_names, X.shape[1])
        out = np.zeros(X.shape[0], dtype=float)
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "forest",
                "feature_schema": self.feature_schema,
                "features_per_split": self.features_per_split,
                "bootstrap": self.bootstrap,
                "seed": self.seed,
                "params": _params_to_dict(self.params),
                "trees": [t.to_dict() for t in self.trees],
            }
        )


def fit_boosted(
    features: np.ndarray,
    targets: np.ndarray,
    params: FitParams,
    feature_schema: list[str] | None = None,
) -> BoostedEnsemble:
    """Gradient boosting on squared error.

    Starts from the target mean; each round fits a tree to the residual
    gradients g = prediction - target with unit hessians, then steps the
    prediction by learning_rate times the tree output.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.size == 0 or X.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite target")
    base = float(np.mean(y))
    pred = np.full(y.shape, base, dtype=float)
    h = np.ones_like(y)
    trees: list[RegressionTree] = []
    for _ in range(params.n_trees):
        g = pred - y
        tree = fit_tree(X, g, h, params)
        pred += params.learning_rate * tree.predict(X)
        trees.append(tree)
    return BoostedEnsemble(
        trees=trees,
        learning_rate=params.learning_rate,
        base_score=base,
        reg_lambda=params.reg_lambda,
        gamma=params.gamma,
        feature_schema=feature_schema,
        params=params,
    )


def fit_forest(
    features: np.ndarray,
    targets: np.ndarray,
    params: FitParams,
    feature_schema: list[str] | None = None,
) -> RandomForestModel:
    """Random forest of variance-reduction trees on bootstrap resamples."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.size == 0 or X.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite target")
    m = X.shape[1]
    k = params.features_per_split if params.features_per_split is not None else math.ceil(m / 3)
    if k > m:
        raise ValueError(f"features_per_split {k} exceeds feature count {m}")
    rng = np.random.default_rng(params.seed)
    n = X.shape[0]
    trees: list[RegressionTree] = []
    for _ in range(params.n_trees):
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        # A CART on targets y is the same engine fit to g=-y, h=1 with no
        # regularization: leaf weight -sum(g)/sum(h) is then the sample mean.
        g = -y[idx]
        h = np.ones(n, dtype=float)
        tree_params = replace(params, reg_lambda=0.0, gamma=0.0)
        builder = _TreeBuilder(
            X[idx], g, h, tree_params, rng=rng, features_per_split=k if k < m else None,
        )
        trees.append(builder.build(np.arange(n)))
    return RandomForestModel(
        trees=trees,
        features_per_split=k,
        bootstrap=params.bootstrap,
        seed=params.seed,
        feature_schema=feature_schema,
        params=params,
    )


def predict(
    model: BoostedEnsemble | RandomForestModel,
    features: np.ndarray,
    feature_names: list[str] | None = None,
) -> np.ndarray:
    """Predict with either ensemble; checks the feature schema when names are given."""
    return model.predict(features, feature_names=feature_names)


def _params_to_dict(params: FitParams) -> dict:
    return {
        "n_trees": params.n_trees,
        "max_depth": params.max_depth,
        "learning_rate": params.learning_rate,
        "reg_lambda": params.reg_lambda,
        "gamma": params.gamma,
        "min_samples_leaf": params.min_samples_leaf,
        "features_per_split": params.features_per_split,
        "bootstrap": params.bootstrap,
        "seed": params.seed,
    }


def _params_from_dict(d: dict) -> FitParams:
    return FitParams(**d)


def model_from_json(text: str) -> BoostedEnsemble | RandomForestModel:
    """Rebuild a serialized ensemble from its self-describing JSON form."""
    d = json.loads(text)
    trees = [RegressionTree.from_dict(t) for t in d["trees"]]
    params = _params_from_dict(d["params"])
    if d["kind"] == "boosted":
        return BoostedEnsemble(
            trees=trees,
            learning_rate=d["learning_rate"],
            base_score=d["base_score"],
            reg_lambda=d["reg_lambda"],
            gamma=d["gamma"],
            feature_schema=d["feature_schema"],
            params=params,
        )
    if d["kind"] == "forest":
        return RandomForestModel(
            trees=trees,
            features_per_split=d["features_per_split"],
            bootstrap=d["bootstrap"],
            seed=d["seed"],
            feature_schema=d["feature_schema"],
            params=params,
        )
    raise ValueError(f"unknown model kind: {d['kind']!r}")
