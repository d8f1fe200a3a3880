"""Target-statistics encoding of categorical features, greedy and ordered.

Greedy encoding replaces a category with the mean target over every row that
shares it, which leaks each row's own target into its feature. The ordered
variant walks a seeded random permutation and encodes each row from the rows
that came strictly earlier, smoothed toward a prior, so no row can see its
own target. The categorical-boosting trainer stacks this encoding (one
one-vs-rest column per class per categorical feature) under the gbt learner
and adds split-gain noise and Bayesian-bootstrap row weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gbt
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class TsConfig:
    prior: float = 0.5
    prior_weight: float = 1.0
    permutation_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.prior <= 1.0:
            raise ConfigError("prior must lie in [0, 1]")
        if not self.prior_weight > 0:
            raise ConfigError("prior_weight must be > 0")


@dataclass(frozen=True)
class CabParams:
    """Tunable knobs of the categorical-boosting trainer."""

    learning_rate: float = 0.3
    random_strength: float = 0.0
    bagging_temperature: float = 0.0
    tree_depth: int = 6
    l2_reg: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.random_strength < 0:
            raise ConfigError("random_strength must be >= 0")
        if self.bagging_temperature < 0:
            raise ConfigError("bagging_temperature must be >= 0")
        if not 1 <= self.tree_depth <= 16:
            raise ConfigError("tree_depth must lie in [1, 16]")
        if self.l2_reg < 0:
            raise ConfigError("l2_reg must be >= 0")

    @classmethod
    def from_mapping(cls, values) -> "CabParams":
        """Absent keys keep their defaults; tree_depth is coerced by rounding."""
        base = cls()
        kwargs = {}
        for name in (
            "learning_rate",
            "random_strength",
            "bagging_temperature",
            "tree_depth",
            "l2_reg",
        ):
            if name in values:
                v = values[name]
                kwargs[name] = int(round(v)) if name == "tree_depth" else float(v)
            else:
                kwargs[name] = getattr(base, name)
        return cls(**kwargs)


def _check_columns(cat_column, targets) -> tuple[np.ndarray, np.ndarray]:
    cat = np.asarray(cat_column)
    tgt = np.asarray(targets, dtype=np.float64)
    if cat.shape != tgt.shape or cat.ndim != 1:
        raise InputError(
            f"category and target columns must be 1-D and equal length, "
            f"got {cat.shape} vs {tgt.shape}"
        )
    return cat, tgt


def greedy_ts(cat_column, targets) -> np.ndarray:
    """Each entry becomes the mean target over all rows sharing its category."""
    cat, tgt = _check_columns(cat_column, targets)
    _, inverse = np.unique(cat, return_inverse=True)
    sums = np.bincount(inverse, weights=tgt)
    counts = np.bincount(inverse)
    return (sums / counts)[inverse]


def ordered_ts(cat_column, targets, cfg: TsConfig) -> np.ndarray:
    """Permutation-history encoding.

    Under the permutation drawn from ``cfg.permutation_seed``, each row is
    encoded as (history_sum + prior_weight * prior) / (history_count +
    prior_weight), where history covers only the strictly earlier rows of the
    same category. A category's first occurrence therefore encodes to the
    prior exactly.
    """
    cat, tgt = _check_columns(cat_column, targets)
    perm = np.random.default_rng(cfg.permutation_seed).permutation(cat.size)
    beta, prior = cfg.prior_weight, cfg.prior
    sums: dict = {}
    counts: dict = {}
    out = np.empty(cat.size)
    for idx in perm:
        key = cat[idx]
        s = sums.get(key, 0.0)
        m = counts.get(key, 0)
        # empty history is exactly the prior; the formula's beta*p/beta would
        # round away from p for some weights
        out[idx] = prior if m == 0 else (s + beta * prior) / (m + beta)
        sums[key] = s + tgt[idx]
        counts[key] = m + 1
    return out


class TsEncoder:
    """Fitted multiclass target-statistics state for one training set.

    Training-time encoding is ordered (leak-free); prediction-time encoding
    of new rows uses the full training set as history, and categories never
    seen in training encode to the prior.
    """

    def __init__(
        self,
        cfg: TsConfig,
        categorical: Sequence[int],
        n_classes: int,
        n_columns: int,
    ):
        self.cfg = cfg
        self.categorical = list(categorical)
        self.n_classes = n_classes
        self.n_columns = n_columns
        # per categorical column: code -> (count, per-class target sums)
        self.stats: list[dict] = []

    @property
    def numeric(self) -> list[int]:
        cat = set(self.categorical)
        return [j for j in range(self.n_columns) if j not in cat]

    def fit(self, features: np.ndarray, labels: np.ndarray) -> "TsEncoder":
        self.stats = []
        for j in self.categorical:
            col = features[:, j]
            stats: dict = {}
            for code, y in zip(col, labels):
                key = int(round(code))
                if key not in stats:
                    stats[key] = [0, np.zeros(self.n_classes)]
                stats[key][0] += 1
                stats[key][1][int(y)] += 1.0
            self.stats.append(stats)
        return self

    def encode_training(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Ordered encoding of the training rows themselves."""
        blocks = [features[:, self.numeric]]
        for j in self.categorical:
            col = features[:, j]
            for k in range(self.n_classes):
                target = (labels == k).astype(np.float64)
                blocks.append(ordered_ts(col, target, self.cfg)[:, None])
        return np.hstack(blocks)

    def encode_apply(self, features: np.ndarray) -> np.ndarray:
        """Full-history encoding for rows outside the training set."""
        beta, prior = self.cfg.prior_weight, self.cfg.prior
        blocks = [features[:, self.numeric]]
        for stats, j in zip(self.stats, self.categorical):
            col = features[:, j]
            enc = np.empty((col.size, self.n_classes))
            for i, code in enumerate(col):
                entry = stats.get(int(round(code)))
                if entry is None or entry[0] == 0:
                    enc[i, :] = prior
                else:
                    count, sums = entry
                    enc[i, :] = (sums + beta * prior) / (count + beta)
            blocks.append(enc)
        return np.hstack(blocks)

    def to_dict(self) -> dict:
        return {
            "prior": self.cfg.prior,
            "prior_weight": self.cfg.prior_weight,
            "permutation_seed": self.cfg.permutation_seed,
            "categorical": self.categorical,
            "n_classes": self.n_classes,
            "n_columns": self.n_columns,
            "stats": [
                {
                    str(code): [count, sums.tolist()]
                    for code, (count, sums) in sorted(stats.items())
                }
                for stats in self.stats
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TsEncoder":
        enc = cls(
            TsConfig(doc["prior"], doc["prior_weight"], doc["permutation_seed"]),
            doc["categorical"],
            doc["n_classes"],
            doc["n_columns"],
        )
        enc.stats = [
            {
                int(code): [entry[0], np.asarray(entry[1], dtype=np.float64)]
                for code, entry in stats.items()
            }
            for stats in doc["stats"]
        ]
        return enc


def cab_train(
    features,
    labels,
    params: CabParams,
    ts_cfg: TsConfig,
    categorical: Sequence[int] = (),
    validation=None,
    seed: int = 0,
    max_rounds: int = 200,
    patience: int = 20,
) -> gbt.Ensemble:
    """Encode categorical columns via ordered target statistics, then boost.

    ``categorical`` lists the column indices holding integer category codes.
    ``random_strength`` perturbs candidate split gains during search;
    ``bagging_temperature`` t draws per-row weights (-ln u)^t per tree, with
    t = 0 giving unit weights. Tree count is governed by early stopping when
    a validation holdout is supplied.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(y.max()) + 1
    encoder = TsEncoder(ts_cfg, categorical, n_classes, X.shape[1]).fit(X, y)
    X_enc = encoder.encode_training(X, y)
    val_enc = None
    if validation is not None:
        val_enc = (encoder.encode_apply(np.asarray(validation[0], dtype=np.float64)),
                   np.asarray(validation[1], dtype=np.int64))
    gbt_params = gbt.GbtParams(
        n_estimators=max_rounds,
        max_depth=params.tree_depth,
        learning_rate=params.learning_rate,
        l2_reg=params.l2_reg,
        l1_reg=0.0,
        gamma=0.0,
        max_delta_step=0.0,
        n_parallel_trees=1,
    )
    model = gbt._train_boosted(
        X_enc,
        y,
        gbt_params,
        validation=val_enc,
        seed=seed,
        patience=patience,
        split_gain_noise=params.random_strength,
        row_weight_temperature=params.bagging_temperature,
    )
    model.encoder = encoder
    return model


def cab_predict_proba(model: gbt.Ensemble, features) -> np.ndarray:
    if model.encoder is None:
        raise InputError("model has no categorical encoder attached")
    X = np.asarray(features, dtype=np.float64)
    return gbt.predict_proba(model, model.encoder.encode_apply(X))


def cab_predict(model: gbt.Ensemble, features) -> np.ndarray:
    return np.argmax(cab_predict_proba(model, features), axis=1)


def save_model(model: gbt.Ensemble, path) -> None:
    """Serialize either model kind; encoder state rides along for cab models."""
    doc = gbt.ensemble_to_dict(model)
    if model.encoder is not None:
        doc["kind"] = "cab"
        doc["encoder"] = model.encoder.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> gbt.Ensemble:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    model = gbt.ensemble_from_dict(doc)
    if doc.get("kind") == "cab":
        model.encoder = TsEncoder.from_dict(doc["encoder"])
    return model
