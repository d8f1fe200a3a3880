import numpy as np
import pytest

from annealboost import gbt
from annealboost.catencode import (
    CabParams,
    TsConfig,
    TsEncoder,
    cab_predict,
    cab_predict_proba,
    cab_train,
    greedy_ts,
    load_model,
    ordered_ts,
    save_model,
)
from annealboost.errors import ConfigError, InputError


def seed_with_permutation(want, n):
    """Find a seed whose permutation of range(n) equals the wanted order."""
    want = list(want)
    for seed in range(2000):
        if list(np.random.default_rng(seed).permutation(n)) == want:
            return seed
    raise AssertionError("no seed found for the requested permutation")


def reference_ordered(cat, targets, perm, prior, beta):
    """Straight-from-definition history walk used as the independent oracle."""
    sums, counts = {}, {}
    out = np.empty(len(cat))
    for idx in perm:
        key = cat[idx]
        out[idx] = (sums.get(key, 0.0) + beta * prior) / (counts.get(key, 0) + beta)
        sums[key] = sums.get(key, 0.0) + targets[idx]
        counts[key] = counts.get(key, 0) + 1
    return out


# --------------------------------------------------------------- greedy


def test_greedy_ts_category_mean():
    cat = np.array([0, 0, 1, 0, 1])
    tgt = np.array([1.0, 0.0, 1.0, 1.0, 1.0])
    enc = greedy_ts(cat, tgt)
    assert enc[0] == pytest.approx(2 / 3)
    assert enc[1] == pytest.approx(2 / 3)
    assert enc[2] == 1.0


def test_greedy_ts_constant_target():
    enc = greedy_ts(np.array([3, 1, 3, 2]), np.full(4, 0.25))
    assert np.allclose(enc, 0.25)


def test_greedy_ts_singleton_category_leaks_own_target():
    enc = greedy_ts(np.array([0, 1, 2]), np.array([1.0, 0.0, 1.0]))
    assert list(enc) == [1.0, 0.0, 1.0]


def test_greedy_ts_length_mismatch():
    with pytest.raises(InputError):
        greedy_ts(np.array([0, 1]), np.array([1.0]))


# -------------------------------------------------------------- ordered


def test_ordered_ts_first_occurrence_encodes_prior():
    cfg = TsConfig(prior=0.5, prior_weight=1.0, permutation_seed=0)
    cat = np.zeros(6, dtype=int)
    tgt = np.ones(6)
    enc = ordered_ts(cat, tgt, cfg)
    perm = np.random.default_rng(0).permutation(6)
    assert enc[perm[0]] == pytest.approx(0.5)


def test_ordered_ts_single_history_row():
    seed = seed_with_permutation([0, 1], 2)
    cfg = TsConfig(prior=0.5, prior_weight=1.0, permutation_seed=seed)
    enc = ordered_ts(np.array([7, 7]), np.array([1.0, 0.0]), cfg)
    assert enc[0] == pytest.approx(0.5)  # empty history forces the prior
    assert enc[1] == pytest.approx((1.0 + 0.5) / (1.0 + 1.0))


def test_ordered_ts_matches_reference_walk():
    rng = np.random.default_rng(42)
    for seed in range(10):
        n = 60
        cat = rng.integers(0, 7, size=n)
        tgt = rng.random(n)
        cfg = TsConfig(prior=0.3, prior_weight=2.0, permutation_seed=seed)
        perm = np.random.default_rng(seed).permutation(n)
        want = reference_ordered(cat, tgt, perm, 0.3, 2.0)
        assert np.allclose(ordered_ts(cat, tgt, cfg), want, atol=1e-15)


def test_ordered_ts_later_rows_cannot_touch_earlier_encodings():
    rng = np.random.default_rng(3)
    n = 40
    cat = rng.integers(0, 5, size=n)
    tgt = rng.random(n)
    cfg = TsConfig(prior=0.5, prior_weight=1.0, permutation_seed=11)
    base = ordered_ts(cat, tgt, cfg)
    perm = list(np.random.default_rng(11).permutation(n))
    position = {row: i for i, row in enumerate(perm)}
    for mutated_row in range(n):
        tweaked = tgt.copy()
        tweaked[mutated_row] = 1.0 - tweaked[mutated_row]
        enc = ordered_ts(cat, tweaked, cfg)
        for row in range(n):
            if position[row] <= position[mutated_row]:
                assert enc[row] == base[row]


def test_ordered_ts_prior_recovery_at_huge_weight():
    rng = np.random.default_rng(5)
    cat = rng.integers(0, 4, size=100)
    tgt = rng.random(100)
    cfg = TsConfig(prior=0.37, prior_weight=1e9, permutation_seed=1)
    enc = ordered_ts(cat, tgt, cfg)
    assert np.max(np.abs(enc - 0.37)) < 1e-6


def test_ordered_ts_permutation_determinism():
    rng = np.random.default_rng(9)
    cat = rng.integers(0, 5, size=50)
    tgt = rng.random(50)
    cfg = TsConfig(0.5, 1.0, permutation_seed=4)
    assert np.array_equal(ordered_ts(cat, tgt, cfg), ordered_ts(cat, tgt, cfg))


def test_unique_categories_greedy_raw_ordered_prior():
    cat = np.arange(8)
    tgt = np.linspace(0, 1, 8)
    assert np.allclose(greedy_ts(cat, tgt), tgt)
    enc = ordered_ts(cat, tgt, TsConfig(prior=0.42, prior_weight=1.0, permutation_seed=0))
    assert np.allclose(enc, 0.42)


def test_ts_config_validation():
    with pytest.raises(ConfigError):
        TsConfig(prior=1.5)
    with pytest.raises(ConfigError):
        TsConfig(prior_weight=0.0)
    with pytest.raises(ConfigError):
        CabParams(tree_depth=0)
    with pytest.raises(ConfigError):
        CabParams(learning_rate=0.0)


# -------------------------------------------------------------- encoder


def mixed_data(n=300, seed=0, n_classes=3):
    rng = np.random.default_rng(seed)
    num = rng.random((n, 2))
    cat = rng.integers(0, 4, size=(n, 1)).astype(float)
    y = rng.integers(0, n_classes, size=n)
    return np.hstack([num, cat]), y


def test_encoder_layout_and_apply():
    X, y = mixed_data()
    enc = TsEncoder(TsConfig(0.5, 1.0, 0), categorical=[2], n_classes=3, n_columns=3)
    enc.fit(X, y)
    out = enc.encode_training(X, y)
    assert out.shape == (X.shape[0], 2 + 3)  # numerics + one column per class
    applied = enc.encode_apply(X)
    assert applied.shape == out.shape
    unseen = X[:1].copy()
    unseen[0, 2] = 99.0
    assert np.allclose(enc.encode_apply(unseen)[0, 2:], 0.5)


def test_encoder_round_trip_through_dict():
    X, y = mixed_data(seed=2)
    enc = TsEncoder(TsConfig(0.4, 2.0, 7), categorical=[2], n_classes=3, n_columns=3)
    enc.fit(X, y)
    clone = TsEncoder.from_dict(enc.to_dict())
    assert np.allclose(enc.encode_apply(X), clone.encode_apply(X))


# ------------------------------------------------------------ cab train


def test_cab_train_knobs_off_equals_plain_gbt():
    X, y = mixed_data(seed=4)
    ts = TsConfig(0.5, 1.0, permutation_seed=3)
    cab = cab_train(
        X,
        y,
        CabParams(learning_rate=0.3, tree_depth=3, l2_reg=1.0),
        ts,
        categorical=[2],
        seed=5,
        max_rounds=8,
    )
    enc = TsEncoder(ts, [2], 3, 3).fit(X, y)
    X_enc = enc.encode_training(X, y)
    plain = gbt.train(
        X_enc,
        y,
        gbt.GbtParams(n_estimators=8, max_depth=3, learning_rate=0.3, l2_reg=1.0),
        seed=5,
    )
    assert gbt.ensemble_to_dict(cab)["trees"] == gbt.ensemble_to_dict(plain)["trees"]


def test_cab_train_knobs_change_the_model():
    X, y = mixed_data(seed=4)
    ts = TsConfig(0.5, 1.0, permutation_seed=3)
    base = cab_train(
        X, y, CabParams(0.3, 0.0, 0.0, 3, 1.0), ts, categorical=[2], seed=5, max_rounds=4
    )
    noisy = cab_train(
        X, y, CabParams(0.3, 0.8, 0.0, 3, 1.0), ts, categorical=[2], seed=5, max_rounds=4
    )
    weighted = cab_train(
        X, y, CabParams(0.3, 0.0, 1.0, 3, 1.0), ts, categorical=[2], seed=5, max_rounds=4
    )
    base_doc = gbt.ensemble_to_dict(base)["trees"]
    assert gbt.ensemble_to_dict(noisy)["trees"] != base_doc
    assert gbt.ensemble_to_dict(weighted)["trees"] != base_doc


def test_ordered_beats_greedy_on_leaky_id_column():
    # every category appears twice in training with independent targets, so a
    # greedy encoding memorizes the training labels while the informative
    # numeric feature carries the only real signal
    rng = np.random.default_rng(17)
    n_cat = 150
    n = 2 * n_cat
    cat = np.repeat(np.arange(n_cat), 2).astype(float)
    informative = rng.normal(0, 1, size=n)
    y = (informative + rng.normal(0, 0.8, size=n) > 0).astype(int)
    order = rng.permutation(n)
    cat, informative, y = cat[order], informative[order], y[order]

    X_test_inf = rng.normal(0, 1, size=400)
    y_test = (X_test_inf + rng.normal(0, 0.8, size=400) > 0).astype(int)
    test_cat = rng.integers(0, n_cat, size=400).astype(float)

    params = gbt.GbtParams(n_estimators=25, max_depth=3, learning_rate=0.3)

    greedy_col = greedy_ts(cat, y.astype(float))
    greedy_stats = {c: greedy_col[cat == c][0] for c in np.unique(cat)}
    greedy_model = gbt.train(np.column_stack([informative, greedy_col]), y, params)
    greedy_test = np.column_stack(
        [X_test_inf, np.array([greedy_stats[c] for c in test_cat])]
    )
    greedy_acc = (gbt.predict(greedy_model, greedy_test) == y_test).mean()

    cfg = TsConfig(prior=float(y.mean()), prior_weight=1.0, permutation_seed=1)
    ordered_col = ordered_ts(cat, y.astype(float), cfg)
    ordered_model = gbt.train(np.column_stack([informative, ordered_col]), y, params)
    sums = {c: y[cat == c].sum() for c in np.unique(cat)}
    counts = {c: (cat == c).sum() for c in np.unique(cat)}
    ordered_test = np.column_stack(
        [
            X_test_inf,
            np.array(
                [
                    (sums[c] + cfg.prior_weight * cfg.prior)
                    / (counts[c] + cfg.prior_weight)
                    for c in test_cat
                ]
            ),
        ]
    )
    ordered_acc = (gbt.predict(ordered_model, ordered_test) == y_test).mean()
    assert ordered_acc > greedy_acc


def test_cab_predict_and_model_round_trip(tmp_path):
    X, y = mixed_data(seed=8)
    model = cab_train(
        X,
        y,
        CabParams(learning_rate=0.4, tree_depth=3),
        TsConfig(0.5, 1.0, 2),
        categorical=[2],
        seed=1,
        max_rounds=6,
    )
    model.feature_names = ["n0", "n1", "c0"]
    proba = cab_predict_proba(model, X)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    path = tmp_path / "cab.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.encoder is not None
    assert np.array_equal(cab_predict(loaded, X), cab_predict(model, X))
    assert loaded.feature_names == model.feature_names


def test_plain_model_round_trip_via_save_model(tmp_path):
    X, y = mixed_data(seed=9)
    model = gbt.train(X, y, gbt.GbtParams(n_estimators=3, max_depth=2))
    path = tmp_path / "plain.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.encoder is None
    assert np.array_equal(gbt.predict(loaded, X), gbt.predict(model, X))
