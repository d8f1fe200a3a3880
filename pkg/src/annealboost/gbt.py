"""Native multiclass gradient-boosted decision trees.

Boosting minimizes softmax cross-entropy plus a per-tree penalty of
gamma * n_leaves + 0.5 * l2 * sum(w^2), using exact second-order split search:
gain = 0.5 * [G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - (G_L+G_R)^2/(H_L+H_R+l2)] - gamma,
leaf weight = -soft_threshold(G, l1) / (H + l2). Each boosting round fits one
tree (or a bagged group of trees) per class; thresholds are exact midpoints of
consecutive distinct sorted feature values, no histogram binning.

Split search keeps per-feature sorted row lists and partitions them as nodes
split, so a tree level costs O(n_rows * n_features) regardless of node count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError

_EPS = 1e-12
_BAG_ROW_FRACTION = 0.8  # row subsample per bagged tree when n_parallel_trees > 1


@dataclass(frozen=True)
class GbtParams:
    """The eight tunable training hyperparameters."""

    n_estimators: int = 100
    max_depth: int = 6
    max_delta_step: float = 0.0
    n_parallel_trees: int = 1
    learning_rate: float = 0.3
    l1_reg: float = 0.0
    l2_reg: float = 1.0
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.max_delta_step < 0:
            raise ConfigError("max_delta_step must be >= 0")
        if self.n_parallel_trees < 1:
            raise ConfigError("n_parallel_trees must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.l1_reg < 0 or self.l2_reg < 0 or self.gamma < 0:
            raise ConfigError("regularizers must be >= 0")

    @classmethod
    def from_mapping(cls, values) -> "GbtParams":
        """Build params from a candidate's value mapping; absent keys keep
        their defaults, integer fields are coerced by rounding."""
        base = cls()
        ints = ("n_estimators", "max_depth", "n_parallel_trees")
        kwargs = {}
        for name in (
            "n_estimators",
            "max_depth",
            "max_delta_step",
            "n_parallel_trees",
            "learning_rate",
            "l1_reg",
            "l2_reg",
            "gamma",
        ):
            if name in values:
                v = values[name]
                kwargs[name] = int(round(v)) if name in ints else float(v)
            else:
                kwargs[name] = getattr(base, name)
        return cls(**kwargs)


@dataclass
class Tree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


@dataclass
class Ensemble:
    """Trained model: trees[round][class][bag], per-class base scores."""

    trees: list
    n_classes: int
    base_scores: np.ndarray
    params: GbtParams
    n_features: int
    encoder: object = None  # attached by the categorical-boosting layer
    feature_names: Optional[list] = None  # training column names, if known


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_gradients(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of total softmax cross-entropy w.r.t. logits.

    g[i, k] = p[i, k] - 1{labels[i] == k}, h[i, k] = p[i, k] * (1 - p[i, k]).
    """
    p = softmax(logits)
    g = p.copy()
    g[np.arange(labels.size), labels] -= 1.0
    h = p * (1.0 - p)
    return g, h


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Total (summed) cross-entropy of the labels under softmax(logits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.sum(log_norm - z[np.arange(labels.size), labels]))


def _soft_threshold(g: float, alpha: float) -> float:
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


class _TreeBuilder:
    """Grows one regression tree on gradient/hessian statistics.

    Nodes carry a (n_features, n_node_rows) matrix whose row j lists the
    node's rows sorted by feature j; splits partition it with one boolean
    mask, so a whole tree level costs O(n_rows * n_features).
    """

    def __init__(
        self,
        X: np.ndarray,
        order: np.ndarray,
        params: GbtParams,
        split_gain_noise: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ):
        self.order_t = np.ascontiguousarray(order.T)  # (d, n) row ids sorted per feature
        # feature values in sorted order; fixed for the whole training run
        self.vals_t = np.take_along_axis(np.ascontiguousarray(X.T), self.order_t, axis=1)
        self.p = params
        self.noise = split_gain_noise
        self.rng = rng
        n, d = X.shape
        self._n = n
        self._mask = np.zeros(n, dtype=bool)  # scratch membership mask
        # reusable workspaces; nodes use leading-column views
        self._wg = np.empty((d, n))
        self._wh = np.empty((d, n))
        self._wa = np.empty((d, n))
        self._wb = np.empty((d, n))
        self._wv = np.empty((d, n), dtype=bool)

    def _leaf_weight(self, g_sum: float, h_sum: float) -> float:
        w = -_soft_threshold(g_sum, self.p.l1_reg) / max(h_sum + self.p.l2_reg, _EPS)
        if self.p.max_delta_step > 0:
            w = min(max(w, -self.p.max_delta_step), self.p.max_delta_step)
        return w * self.p.learning_rate

    def _best_split(self, ids2: np.ndarray, vals: np.ndarray, g: np.ndarray, h: np.ndarray):
        """Best (feature, position, threshold, gain) over all features at once.

        Works in preallocated buffers. The full affine part of the gain
        (subtracting the parent score, halving, gamma) is applied only to the
        winning candidate; selection needs just the two child score terms.
        """
        lam, m = self.p.l2_reg, ids2.shape[1]
        valid = np.not_equal(vals[:, 1:], vals[:, :-1], out=self._wv[:, : m - 1])
        if not valid.any():
            return None
        gl = np.take(g, ids2, out=self._wg[:, :m])
        hl = np.take(h, ids2, out=self._wh[:, :m])
        np.cumsum(gl, axis=1, out=gl)
        np.cumsum(hl, axis=1, out=hl)
        g_tot = gl[:, -1:]
        h_tot = hl[:, -1:]
        GL, HL = gl[:, :-1], hl[:, :-1]
        A = self._wa[:, : m - 1]
        B = self._wb[:, : m - 1]
        np.add(HL, lam, out=B)
        np.maximum(B, _EPS, out=B)
        np.multiply(GL, GL, out=A)
        np.divide(A, B, out=A)  # A = GL^2 / (HL + lam)
        np.subtract(g_tot, GL, out=B)
        np.multiply(B, B, out=B)
        C = GL  # GL is no longer needed; reuse as the right-side denominator
        np.subtract(h_tot + lam, HL, out=C)
        np.maximum(C, _EPS, out=C)
        np.divide(B, C, out=B)
        np.add(A, B, out=A)  # A = child score sum; gain = 0.5*(A - parent) - gamma
        if self.noise > 0:
            # gain_scale: spread of candidate gains at this node, fallback 1.
            # Gains are 0.5 * A plus per-feature constants, so the noise that
            # Normal(0, noise * std(gain)) would add to gains is added here
            # at twice the scale, keeping the selection identical.
            scale = float(A[valid].std())
            if not np.isfinite(scale) or scale <= 0:
                scale = 2.0
            A[valid] += self.rng.normal(0.0, self.noise * scale, size=int(valid.sum()))
        np.copyto(A, -np.inf, where=np.logical_not(valid, out=valid))
        flat = int(np.argmax(A))
        j, pos = divmod(flat, m - 1)
        parent = float(g_tot[j, 0]) ** 2 / max(float(h_tot[j, 0]) + lam, _EPS)
        gain = 0.5 * (float(A[j, pos]) - parent) - self.p.gamma
        if not gain > 0:
            return None
        thr = 0.5 * (vals[j, pos] + vals[j, pos + 1])
        if thr >= vals[j, pos + 1]:  # midpoint not representable between the two
            thr = float(vals[j, pos])
        return j, pos, float(thr), gain

    def fit(self, rows: np.ndarray, g: np.ndarray, h: np.ndarray) -> tuple[Tree, np.ndarray]:
        """Grow a tree on the given rows; returns it plus per-row train predictions."""
        feature, threshold, left, right, value, gain = [], [], [], [], [], []
        pred = np.zeros(self._n)

        def new_node() -> int:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            gain.append(0.0)
            return len(feature) - 1

        d = self.order_t.shape[0]
        if rows.size == self._n:
            root_ids, root_vals = self.order_t, self.vals_t
        else:
            self._mask[rows] = True
            picked = self._mask[self.order_t]
            root_ids = self.order_t[picked].reshape(d, rows.size)
            root_vals = self.vals_t[picked].reshape(d, rows.size)
            self._mask[rows] = False

        stack = [(new_node(), root_ids, root_vals, 0)]
        while stack:
            node, ids2, vals2, depth = stack.pop()
            node_rows = ids2[0]
            split = (
                self._best_split(ids2, vals2, g, h)
                if depth < self.p.max_depth and node_rows.size >= 2
                else None
            )
            if split is None:
                w = self._leaf_weight(float(g[node_rows].sum()), float(h[node_rows].sum()))
                value[node] = w
                pred[node_rows] = w
                continue
            j, pos, thr, split_gain = split
            left_rows = ids2[j, : pos + 1]
            self._mask[left_rows] = True
            picked = np.take(self._mask, ids2, out=self._wv[:, : ids2.shape[1]])
            left_ids = ids2[picked].reshape(d, pos + 1)
            left_vals = vals2[picked].reshape(d, pos + 1)
            np.logical_not(picked, out=picked)
            right_ids = ids2[picked].reshape(d, ids2.shape[1] - pos - 1)
            right_vals = vals2[picked].reshape(d, ids2.shape[1] - pos - 1)
            self._mask[left_rows] = False
            feature[node] = j
            threshold[node] = thr
            gain[node] = split_gain
            left_child = new_node()
            right_child = new_node()
            left[node] = left_child
            right[node] = right_child
            stack.append((left_child, left_ids, left_vals, depth + 1))
            stack.append((right_child, right_ids, right_vals, depth + 1))

        tree = Tree(
            feature=np.asarray(feature, dtype=np.int32),
            threshold=np.asarray(threshold, dtype=np.float64),
            left=np.asarray(left, dtype=np.int32),
            right=np.asarray(right, dtype=np.int32),
            value=np.asarray(value, dtype=np.float64),
            gain=np.asarray(gain, dtype=np.float64),
        )
        return tree, pred


def tree_predict(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Route every row to its leaf and return leaf values."""
    node = np.zeros(X.shape[0], dtype=np.int32)
    while True:
        feat = tree.feature[node]
        active = np.nonzero(feat >= 0)[0]
        if active.size == 0:
            break
        cur = node[active]
        go_left = X[active, feat[active]] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
    return tree.value[node]


def _validate_features(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("feature matrix must be 2-dimensional")
    if not np.isfinite(X).all():
        raise InputError("feature matrix contains non-finite values")
    return X


def _train_boosted(
    X: np.ndarray,
    y: np.ndarray,
    params: GbtParams,
    validation=None,
    seed: int = 0,
    patience: int = 20,
    split_gain_noise: float = 0.0,
    row_weight_temperature: float = 0.0,
) -> Ensemble:
    """Boosting loop shared by the plain and categorical-boosting front ends."""
    X = _validate_features(X)
    y = np.asarray(y, dtype=np.int64)
    if y.size != X.shape[0]:
        raise InputError("feature and label row counts differ")
    if y.size == 0:
        raise InputError("empty training set")
    if y.min() < 0:
        raise InputError("labels must be non-negative class indices")
    n_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=n_classes)
    if (counts > 0).sum() < 2:
        raise InputError("training needs at least 2 classes present")
    if (counts == 0).any():
        missing = int(np.nonzero(counts == 0)[0][0])
        raise InputError(f"class {missing} has no training samples")

    n = X.shape[0]
    base = np.log(counts / n)
    order = np.argsort(X, axis=0, kind="stable").astype(np.int32)
    rng = np.random.default_rng(seed)
    builder = _TreeBuilder(X, order, params, split_gain_noise, rng)
    logits = np.tile(base, (n, 1))

    X_val = y_val = val_logits = None
    if validation is not None:
        X_val = _validate_features(validation[0])
        y_val = np.asarray(validation[1], dtype=np.int64)
        val_logits = np.tile(base, (X_val.shape[0], 1))
    best_val = -np.inf
    best_round = -1

    rounds = []
    for r in range(params.n_estimators):
        g, h = softmax_gradients(logits, y)
        round_trees = []
        for k in range(n_classes):
            class_trees = []
            class_update = np.zeros(n)
            for _ in range(params.n_parallel_trees):
                if params.n_parallel_trees > 1:
                    m = max(2, int(round(_BAG_ROW_FRACTION * n)))
                    rows = rng.choice(n, size=m, replace=False)
                else:
                    rows = np.arange(n)
                gk, hk = g[:, k], h[:, k]
                if row_weight_temperature > 0:
                    u = np.maximum(rng.random(n), 1e-300)
                    w = (-np.log(u)) ** row_weight_temperature
                    gk, hk = gk * w, hk * w
                tree, train_pred = builder.fit(rows, gk, hk)
                class_trees.append(tree)
                if params.n_parallel_trees > 1:
                    class_update += tree_predict(tree, X)
                else:
                    class_update += train_pred
            class_update /= params.n_parallel_trees
            logits[:, k] += class_update
            if X_val is not None:
                val_update = np.zeros(X_val.shape[0])
                for tree in class_trees:
                    val_update += tree_predict(tree, X_val)
                val_logits[:, k] += val_update / params.n_parallel_trees
            round_trees.append(class_trees)
        rounds.append(round_trees)
        if X_val is not None:
            acc = float(np.mean(np.argmax(val_logits, axis=1) == y_val))
            if acc > best_val:
                best_val = acc
                best_round = r
            elif r - best_round >= patience:
                break
    if X_val is not None and best_round >= 0:
        rounds = rounds[: best_round + 1]

    return Ensemble(
        trees=rounds,
        n_classes=n_classes,
        base_scores=base,
        params=params,
        n_features=X.shape[1],
    )


def train(
    features,
    labels,
    params: GbtParams,
    validation=None,
    seed: int = 0,
    patience: int = 20,
) -> Ensemble:
    """Fit the boosted ensemble.

    ``validation`` is an optional (features, labels) holdout; when given,
    boosting stops once holdout accuracy has not improved for ``patience``
    rounds and the ensemble is truncated at the best round.
    """
    return _train_boosted(
        np.asarray(features), np.asarray(labels), params, validation, seed, patience
    )


def decision_scores(model: Ensemble, features) -> np.ndarray:
    """Per-class logit sums: base scores plus every tree's contribution."""
    X = _validate_features(features)
    if X.shape[1] != model.n_features:
        raise InputError(
            f"expected {model.n_features} feature columns, got {X.shape[1]}"
        )
    logits = np.tile(model.base_scores, (X.shape[0], 1))
    for round_trees in model.trees:
        for k, class_trees in enumerate(round_trees):
            update = np.zeros(X.shape[0])
            for tree in class_trees:
                update += tree_predict(tree, X)
            logits[:, k] += update / len(class_trees)
    return logits


def predict_proba(model: Ensemble, features) -> np.ndarray:
    """Class-probability matrix; rows sum to 1 and entries stay inside (0, 1)."""
    p = softmax(decision_scores(model, features))
    p = np.clip(p, 1e-15, None)
    return p / p.sum(axis=1, keepdims=True)


def predict(model: Ensemble, features) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(predict_proba(model, features), axis=1)


def feature_importance(model: Ensemble) -> np.ndarray:
    """Total split gain per feature, normalized to sum to 1 (zeros if no splits)."""
    totals = np.zeros(model.n_features)
    for round_trees in model.trees:
        for class_trees in round_trees:
            for tree in class_trees:
                split = tree.feature >= 0
                np.add.at(totals, tree.feature[split], tree.gain[split])
    s = totals.sum()
    return totals / s if s > 0 else totals


def _tree_to_dict(tree: Tree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "gain": tree.gain.tolist(),
    }


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        feature=np.asarray(d["feature"], dtype=np.int32),
        threshold=np.asarray(d["threshold"], dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.int32),
        right=np.asarray(d["right"], dtype=np.int32),
        value=np.asarray(d["value"], dtype=np.float64),
        gain=np.asarray(d["gain"], dtype=np.float64),
    )


def ensemble_to_dict(model: Ensemble) -> dict:
    """Versioned JSON-ready document (numeric model only)."""
    return {
        "format": "annealboost-ensemble",
        "version": 1,
        "kind": "gbt",
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "feature_names": model.feature_names,
        "base_scores": [float(b) for b in model.base_scores],
        "params": {
            "n_estimators": model.params.n_estimators,
            "max_depth": model.params.max_depth,
            "max_delta_step": model.params.max_delta_step,
            "n_parallel_trees": model.params.n_parallel_trees,
            "learning_rate": model.params.learning_rate,
            "l1_reg": model.params.l1_reg,
            "l2_reg": model.params.l2_reg,
            "gamma": model.params.gamma,
        },
        "trees": [
            [[_tree_to_dict(t) for t in class_trees] for class_trees in round_trees]
            for round_trees in model.trees
        ],
    }


def ensemble_from_dict(doc: dict) -> Ensemble:
    if doc.get("format") != "annealboost-ensemble":
        raise InputError("not an ensemble document")
    if doc.get("version") != 1:
        raise InputError(f"unsupported ensemble version {doc.get('version')!r}")
    return Ensemble(
        trees=[
            [[_tree_from_dict(t) for t in class_trees] for class_trees in round_trees]
            for round_trees in doc["trees"]
        ],
        n_classes=int(doc["n_classes"]),
        base_scores=np.asarray(doc["base_scores"], dtype=np.float64),
        params=GbtParams(**doc["params"]),
        n_features=int(doc["n_features"]),
        feature_names=doc.get("feature_names"),
    )


def save_ensemble(model: Ensemble, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ensemble_to_dict(model), fh)


def load_ensemble(path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        return ensemble_from_dict(json.load(fh))
