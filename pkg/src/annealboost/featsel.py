"""Feature selection: chi-square scoring with top-k filtering,
importance-threshold selection, and recursive feature elimination driven by
Gini impurity importances from a small CART forest.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class FeatureScore:
    name: str
    score: float
    rank: int  # 1 = best; ties resolved toward the lower feature index


@dataclass(frozen=True)
class DataGroup:
    """A named feature subset plus everything needed to regenerate it."""

    name: str
    features: tuple[str, ...]
    provenance: dict = field(default_factory=dict)


def _names(feature_names: Optional[Sequence[str]], d: int) -> list[str]:
    if feature_names is None:
        return [f"f{j}" for j in range(d)]
    if len(feature_names) != d:
        raise InputError("feature_names length does not match matrix width")
    return list(feature_names)


def equal_width_bins(column: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Discretize a continuous column into 0..n_bins-1; constant columns bin to 0."""
    column = np.asarray(column, dtype=np.float64)
    lo, hi = column.min(), column.max()
    if hi <= lo:
        return np.zeros(column.size, dtype=np.int64)
    bins = np.floor((column - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.minimum(bins, n_bins - 1)


def chi_square_scores(
    features: np.ndarray,
    labels: np.ndarray,
    feature_names: Optional[Sequence[str]] = None,
) -> list[FeatureScore]:
    """Per-feature chi-square statistic of the value-by-class contingency table.

    Features must already be non-negative discrete codes; bin continuous
    columns first (see :func:`equal_width_bins`).
    """
    X = np.asarray(features)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise InputError("features must be 2-D with one row per label")
    if X.size and X.min() < 0:
        raise InputError("chi-square features must be non-negative codes")
    names = _names(feature_names, X.shape[1])
    n_classes = int(y.max()) + 1
    n = y.size
    col_tot = np.bincount(y, minlength=n_classes).astype(np.float64)

    stats = []
    for j in range(X.shape[1]):
        vals = np.asarray(np.round(X[:, j]), dtype=np.int64)
        _, inv = np.unique(vals, return_inverse=True)
        observed = np.zeros((inv.max() + 1, n_classes))
        np.add.at(observed, (inv, y), 1.0)
        row_tot = observed.sum(axis=1)
        expected = np.outer(row_tot, col_tot) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
        stats.append(float(terms.sum()))

    order = np.lexsort((np.arange(len(stats)), -np.asarray(stats)))
    ranks = np.empty(len(stats), dtype=np.int64)
    ranks[order] = np.arange(1, len(stats) + 1)
    return [FeatureScore(names[j], stats[j], int(ranks[j])) for j in range(len(stats))]


def select_k_best(scores: Sequence[FeatureScore], k: int) -> DataGroup:
    """The k best-ranked features. Uses the rank carried by each score, so the
    result is invariant to reordering of the input list."""
    if not 1 <= k <= len(scores):
        raise ConfigError(f"k={k} out of range for {len(scores)} features")
    chosen = sorted((s for s in scores if s.rank <= k), key=lambda s: s.rank)
    return DataGroup(
        name="Chi_SKB",
        features=tuple(s.name for s in chosen),
        provenance={"method": "select_k_best", "k": k},
    )


def select_from_model(
    importances: np.ndarray,
    threshold: Union[str, float] = "mean",
    feature_names: Optional[Sequence[str]] = None,
    name: str = "SFM",
) -> DataGroup:
    """Keep features whose importance reaches the threshold (default: mean).

    If the threshold would remove everything, falls back to the single best
    feature with a warning.
    """
    imp = np.asarray(importances, dtype=np.float64)
    if imp.ndim != 1:
        raise InputError("importances must be a 1-D array")
    if imp.size and imp.min() < 0:
        raise InputError("importances must be non-negative")
    names = _names(feature_names, imp.size)
    cut = float(np.mean(imp)) if threshold == "mean" else float(threshold)
    keep = [j for j in range(imp.size) if imp[j] >= cut]
    if not keep:
        best = int(np.argmax(imp))
        warnings.warn(
            f"threshold {cut} removed every feature; keeping best feature "
            f"{names[best]!r}",
            stacklevel=2,
        )
        keep = [best]
    return DataGroup(
        name=name,
        features=tuple(names[j] for j in keep),
        provenance={"method": "select_from_model", "threshold": cut},
    )


class _GiniTree:
    """CART classifier grown on Gini impurity; records impurity decreases."""

    def __init__(self, max_depth: int, min_leaf: int, n_classes: int):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.n_classes = n_classes

    def fit(
        self,
        X: np.ndarray,
        y: np.ndarray,
        rows: np.ndarray,
        feature_pool: int,
        rng: Optional[np.random.Generator],
        importances: np.ndarray,
    ) -> None:
        """Accumulate node-weighted impurity decreases into ``importances``."""
        n_total = rows.size
        onehot = np.eye(self.n_classes)

        def gini_from_counts(counts: np.ndarray, m) -> np.ndarray:
            p = counts / np.maximum(np.asarray(m, dtype=np.float64), 1.0)
            return 1.0 - (p * p).sum(axis=-1)

        stack = [(rows, 0)]
        while stack:
            node_rows, depth = stack.pop()
            m = node_rows.size
            counts = np.bincount(y[node_rows], minlength=self.n_classes).astype(float)
            parent_gini = float(gini_from_counts(counts, m))
            if depth >= self.max_depth or m < 2 * self.min_leaf or parent_gini == 0.0:
                continue
            if rng is not None and feature_pool < X.shape[1]:
                feats = rng.choice(X.shape[1], size=feature_pool, replace=False)
            else:
                feats = np.arange(X.shape[1])
            best = None
            for j in feats:
                order = np.argsort(X[node_rows, j], kind="stable")
                xs = X[node_rows[order], j]
                hot = onehot[y[node_rows[order]]]
                cum = np.cumsum(hot, axis=0)[:-1]
                sizes_l = np.arange(1, m)
                sizes_r = m - sizes_l
                valid = (
                    (xs[:-1] != xs[1:])
                    & (sizes_l >= self.min_leaf)
                    & (sizes_r >= self.min_leaf)
                )
                if not valid.any():
                    continue
                gini_l = gini_from_counts(cum, sizes_l[:, None])
                gini_r = gini_from_counts(counts - cum, sizes_r[:, None])
                decrease = parent_gini - (sizes_l * gini_l + sizes_r * gini_r) / m
                decrease = np.where(valid, decrease, -np.inf)
                pos = int(np.argmax(decrease))
                if decrease[pos] > 0 and (best is None or decrease[pos] > best[0]):
                    thr = 0.5 * (xs[pos] + xs[pos + 1])
                    if thr >= xs[pos + 1]:
                        thr = float(xs[pos])
                    best = (float(decrease[pos]), int(j), thr, order, pos)
            if best is None:
                continue
            dec, j, thr, order, pos = best
            importances[j] += (m / n_total) * dec
            left_rows = node_rows[order[: pos + 1]]
            right_rows = node_rows[order[pos + 1 :]]
            stack.append((left_rows, depth + 1))
            stack.append((right_rows, depth + 1))


def gini_importance_forest(
    features: np.ndarray,
    labels: np.ndarray,
    n_trees: int = 100,
    seed: int = 0,
    max_depth: int = 12,
    min_leaf: int = 2,
) -> np.ndarray:
    """Mean impurity decrease per feature, normalized to sum to 1.

    With ``n_trees == 1`` this is a deterministic single tree on all rows and
    all features (the decision-tree fitter); more trees use bootstrap rows and
    sqrt-of-features subsampling per node.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise InputError("importance fitting needs at least 2 classes")
    n, d = X.shape
    n_classes = int(y.max()) + 1
    totals = np.zeros(d)
    rng = np.random.default_rng(seed)
    tree = _GiniTree(max_depth, min_leaf, n_classes)
    for _ in range(n_trees):
        if n_trees == 1:
            rows = np.arange(n)
            tree.fit(X, y, rows, d, None, totals)
        else:
            rows = rng.integers(0, n, size=n)
            pool = max(1, int(round(np.sqrt(d))))
            tree.fit(X, y, rows, pool, rng, totals)
    s = totals.sum()
    return totals / s if s > 0 else totals


def rfe(
    features: np.ndarray,
    labels: np.ndarray,
    fitter: str = "decision-tree",
    n_select: int = 10,
    step: int = 1,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
    n_trees: int = 100,
    name: Optional[str] = None,
) -> DataGroup:
    """Recursive feature elimination over Gini importances.

    Repeatedly refits on the surviving features and drops the ``step``
    lowest-importance ones (never crossing n_select) until n_select remain.
    """
    X = np.asarray(features, dtype=np.float64)
    names = _names(feature_names, X.shape[1])
    if not 1 <= n_select < X.shape[1]:
        raise ConfigError(f"n_select={n_select} out of range for {X.shape[1]} features")
    if step < 1:
        raise ConfigError("step must be >= 1")
    if fitter not in ("decision-tree", "random-forest"):
        raise ConfigError(f"unknown fitter {fitter!r}")
    trees = 1 if fitter == "decision-tree" else n_trees

    surviving = list(range(X.shape[1]))
    while len(surviving) > n_select:
        imp = gini_importance_forest(X[:, surviving], labels, n_trees=trees, seed=seed)
        # rank descending by importance, lower index wins ties; drop from the bottom
        ranking = np.lexsort((np.arange(len(surviving)), -imp))
        n_drop = min(step, len(surviving) - n_select)
        dropped = set(ranking[len(surviving) - n_drop :].tolist())
        surviving = [f for i, f in enumerate(surviving) if i not in dropped]
    return DataGroup(
        name=name or ("DT_RFE" if fitter == "decision-tree" else "RF_RFE"),
        features=tuple(names[j] for j in surviving),
        provenance={
            "method": "rfe",
            "fitter": fitter,
            "n_select": n_select,
            "step": step,
            "seed": seed,
        },
    )
