"""Acceptance gate: every criterion runs at its stated tolerance and prints
one PASS/FAIL line (visible with ``pytest -s tests/test_acceptance.py``).

The pipeline experiment trains thousands of models across five seeds and
dominates the suite's runtime; expect the full gate to take tens of minutes.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from annealboost import cli, dataprep, featsel, gbt, metrics
from annealboost.benchmarks import benchmark_space, multimodal
from annealboost.catencode import TsConfig, ordered_ts
from annealboost.paramspace import make_spec
from annealboost.tuner import (
    AsaConfig,
    SaConfig,
    acceptance_probability,
    metropolis_accept,
    run_anneal,
    run_grid,
)

from synthdata import make_synthetic


@contextmanager
def gate(name):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL")
        raise
    print(f"\nACCEPTANCE {name}: PASS ({time.perf_counter() - started:.1f}s)")


UNIT_SPACE = [make_spec("x", "float", 0.0, 1.0, perturb_sd=0.2)]


def wiggly(cand):
    return 0.5 + 0.5 * math.sin(7.0 * cand["x"]) ** 2


# ------------------------------------------------- 1. schedule exactness


def test_schedule_exactness():
    with gate("schedule-exactness"):
        started = time.perf_counter()
        _, sa_trace = run_anneal(
            "sa",
            SaConfig(max_iters=500, initial_temp=1000.0, cooling_rate=0.8, moves_per_iter=1),
            UNIT_SPACE,
            wiggly,
            np.random.default_rng(0),
        )
        for rec in sa_trace.records:
            expected = 1000.0 * 0.8**rec.iteration
            assert abs(rec.temperature - expected) <= 1e-9 * max(expected, 1e-30)

        _, asa_trace = run_anneal(
            "asa",
            AsaConfig(max_iters=500, t_min=2.0, beta=2.0, moves_per_iter=1),
            UNIT_SPACE,
            wiggly,
            np.random.default_rng(1),
        )
        current = asa_trace.records[0].fitness
        for rec in asa_trace.records[1:]:
            want = 2.0 + 2.0 * math.log1p(rec.bad_moves)
            assert abs(rec.temperature - want) <= 1e-9 * want
            if rec.fitness > current:
                assert rec.bad_moves == 0
            if rec.accepted:
                current = rec.fitness
        assert time.perf_counter() - started < 1.0


# -------------------------------------------- 2. acceptance calibration


def test_acceptance_calibration():
    with gate("acceptance-calibration"):
        started = time.perf_counter()
        rng = np.random.default_rng(42)
        n = 100_000
        for delta, temp in ((-0.05, 1.0), (-0.5, 2.0), (-0.1, 0.5)):
            want = min(1.0, math.exp(delta / temp))
            assert acceptance_probability(0.5 + delta, 0.5, temp) == pytest.approx(want)
            hits = 0
            for _ in range(n):
                hits += metropolis_accept(0.5 + delta, 0.5, temp, rng)
            se = math.sqrt(want * (1.0 - want) / n)
            assert abs(hits / n - want) <= 3.0 * se, (delta, temp, hits / n, want)
        assert time.perf_counter() - started < 5.0


# ------------------------------------------------- 3. oracle equivalence


def brute_macro(actual, predicted, k):
    n = len(actual)
    accs, precs, recs = [], [], []
    for c in range(k):
        tp = sum(1 for a, p in zip(actual, predicted) if a == c and p == c)
        fp = sum(1 for a, p in zip(actual, predicted) if a != c and p == c)
        fn = sum(1 for a, p in zip(actual, predicted) if a == c and p != c)
        tn = n - tp - fp - fn
        accs.append((tp + tn) / n)
        precs.append(tp / (tp + fp) if tp + fp else 0.0)
        recs.append(tp / (tp + fn) if tp + fn else 0.0)
    precision = sum(precs) / k
    recall = sum(recs) / k
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return sum(accs) / k, precision, recall, f1


def brute_chi2(feature, labels):
    total = 0.0
    n = len(labels)
    for v in sorted(set(feature)):
        row_total = sum(1 for f in feature if f == v)
        for c in sorted(set(labels)):
            col_total = sum(1 for y in labels if y == c)
            observed = sum(1 for f, y in zip(feature, labels) if f == v and y == c)
            expected = row_total * col_total / n
            if expected > 0:
                total += (observed - expected) ** 2 / expected
    return total


def brute_impute(values, missing, k):
    n, d = values.shape
    out = values.copy()
    for i in range(n):
        for j in range(d):
            if not missing[i, j]:
                continue
            dists = []
            for r in range(n):
                if r == i or missing[r, j]:
                    continue
                shared = [c for c in range(d) if not missing[i, c] and not missing[r, c]]
                dist = (
                    sum((values[i, c] - values[r, c]) ** 2 for c in shared)
                    if shared
                    else np.inf
                )
                dists.append((dist, r))
            dists.sort(key=lambda t: (t[0], t[1]))
            out[i, j] = np.mean([values[r, j] for _, r in dists[:k]])
    return out


def test_oracle_equivalence():
    with gate("oracle-equivalence"):
        started = time.perf_counter()
        rng = np.random.default_rng(7)

        for _ in range(1000):
            k = int(rng.integers(2, 6))
            counts = rng.integers(0, 7, size=(k, k))
            if counts.sum() == 0:
                counts[0, 0] = 1
            actual, predicted = [], []
            for a in range(k):
                for p in range(k):
                    actual.extend([a] * counts[a, p])
                    predicted.extend([p] * counts[a, p])
            got = metrics.macro_scores(metrics.confusion(actual, predicted, k))
            want = brute_macro(actual, predicted, k)
            assert np.allclose(got, want, atol=1e-9)

        for _ in range(1000):
            n = int(rng.integers(8, 40))
            feature = rng.integers(0, int(rng.integers(2, 6)), size=n)
            labels = rng.integers(0, int(rng.integers(2, 4)), size=n)
            got = featsel.chi_square_scores(feature[:, None], labels)[0].score
            assert abs(got - brute_chi2(feature, labels)) <= 1e-9

        for _ in range(1000):
            n, d = int(rng.integers(6, 14)), int(rng.integers(2, 4))
            values = np.round(rng.normal(0, 2, size=(n, d)), 1)
            missing = rng.random((n, d)) < 0.2
            k = int(rng.integers(1, 3))
            for j in range(d):
                if (~missing[:, j]).sum() < k + 1:
                    missing[: k + 1, j] = False
            data = dataprep.Dataset(
                columns=[dataprep.Column(f"x{j}", "numeric") for j in range(d)],
                values=values.copy(),
                missing=missing.copy(),
                labels=np.zeros(n, dtype=np.int64),
                label_name="y",
                label_names=["0"],
            )
            got = dataprep.knn_impute(data, k).values
            want = brute_impute(values, missing, k)
            assert np.max(np.abs(got - want)) <= 1e-9
        assert time.perf_counter() - started < 30.0


# --------------------------------------------------- 4. gbt correctness


def test_gbt_correctness():
    with gate("gbt-correctness"):
        started = time.perf_counter()
        rng = np.random.default_rng(3)
        logits = rng.normal(0, 1, size=(10, 3))
        labels = rng.integers(0, 3, size=10)
        g, h = gbt.softmax_gradients(logits, labels)
        eps = 1e-3
        for i in range(10):
            row, lab = logits[i : i + 1], labels[i : i + 1]
            for k in range(3):
                up, down = row.copy(), row.copy()
                up[0, k] += eps
                down[0, k] -= eps
                lu = gbt.softmax_cross_entropy(up, lab)
                ld = gbt.softmax_cross_entropy(down, lab)
                l0 = gbt.softmax_cross_entropy(row, lab)
                g_fd = (lu - ld) / (2 * eps)
                h_fd = (lu - 2 * l0 + ld) / (eps * eps)
                assert abs(g[i, k] - g_fd) <= 1e-4 * max(abs(g_fd), 1e-3)
                assert abs(h[i, k] - h_fd) <= 1e-4 * max(abs(h_fd), 1e-3)

        X = rng.random((500, 2))
        y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(int)
        model = gbt.train(X, y, gbt.GbtParams(n_estimators=40, max_depth=2, learning_rate=0.4))
        assert (gbt.predict(model, X) == y).mean() >= 0.99

        Xb = rng.random((400, 4))
        yb = rng.integers(0, 3, size=400)
        collapsed = gbt.train(Xb, yb, gbt.GbtParams(n_estimators=4, max_depth=4, gamma=1e9))
        for round_trees in collapsed.trees:
            for class_trees in round_trees:
                for tree in class_trees:
                    assert tree.n_leaves == 1
        priors = np.bincount(yb, minlength=3) / yb.size
        assert np.allclose(gbt.predict_proba(collapsed, Xb[:5]), priors, atol=1e-12)
        assert time.perf_counter() - started < 60.0


# -------------------------------------------- 5. ordered-TS no-leakage


def test_ordered_ts_no_leakage():
    with gate("ordered-ts-no-leakage"):
        started = time.perf_counter()
        rng = np.random.default_rng(11)
        n = 200
        cat = rng.integers(0, 12, size=n)
        targets = rng.random(n)
        cfg = TsConfig(prior=0.4, prior_weight=1.5, permutation_seed=5)
        base = ordered_ts(cat, targets, cfg)
        perm = list(np.random.default_rng(5).permutation(n))
        position = {row: i for i, row in enumerate(perm)}
        for mutated in range(n):
            tweaked = targets.copy()
            tweaked[mutated] += 1.0
            enc = ordered_ts(cat, tweaked, cfg)
            for row in range(n):
                if position[row] <= position[mutated]:
                    assert enc[row] == base[row]

        firsts = set()
        seen = set()
        for row in perm:
            if cat[row] not in seen:
                firsts.add(row)
                seen.add(cat[row])
        for row in firsts:
            assert base[row] == cfg.prior

        heavy = TsConfig(prior=0.4, prior_weight=1e9, permutation_seed=5)
        enc = ordered_ts(cat, targets, heavy)
        assert np.max(np.abs(enc - 0.4)) < 1e-6
        assert time.perf_counter() - started < 10.0


# --------------------------------------------- 6. pipeline experiment


PIPELINE_SPACE = """
[n_estimators]
kind = integer
lower = 1
upper = 8
init_lower = 1
init_upper = 6
sd = 2

[max_depth]
kind = integer
lower = 1
upper = 4
sd = 2

[max_delta_step]
kind = integer
lower = 1
upper = 10
init_upper = 5
sd = 2

[learning_rate]
kind = float
lower = 0
upper = 1
init_lower = 0.001
sd = 1

[l1_reg]
kind = float
lower = 0
upper = 1
sd = 1

[l2_reg]
kind = float
lower = 0
upper = 1
sd = 1

[gamma]
kind = float
lower = 0
upper = 5
init_lower = 0.001
init_upper = 2
sd = 1
"""


def _pipeline_config(workdir, seed, csv_path, schema_path):
    (workdir / "space.ini").write_text(PIPELINE_SPACE, encoding="utf-8")
    text = f"""
[run]
seed = {seed}
output_dir = {workdir}/out

[data]
csv = {csv_path}
schema = {schema_path}

[prepare]
impute_k = 5
scale = true

[split]
test_fraction = 0.2
val_fraction = 0.2
stratified = true

[select]
methods = rf_rfe, all
n_select = 10
rf_trees = 100

[model]
kind = gbt

[tune]
kind = asa
max_iters = 500
moves_per_iter = 8
space = space.ini
smote_k = 5
groups = RF_RFE
"""
    path = workdir / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_pipeline_experiment(tmp_path):
    with gate("pipeline-experiment"):
        deltas, eliminated = [], []
        for seed in range(5):
            workdir = tmp_path / f"seed{seed}"
            workdir.mkdir()
            csv_path, schema_path, _, _ = make_synthetic(
                workdir,
                n_rows=5000,
                seed=seed,
                label_noise=0.3,
                spread=(0.4, 0.9),
            )
            config = _pipeline_config(workdir, seed, csv_path, schema_path)

            started = time.perf_counter()
            assert cli.main(["prepare", "--config", str(config)]) == 0
            assert cli.main(["select", "--config", str(config)]) == 0
            assert cli.main(["tune", "--config", str(config)]) == 0
            out = workdir / "out"
            assert (
                cli.main(
                    [
                        "evaluate",
                        "--config",
                        str(config),
                        "--model",
                        str(out / "RF_RFE_model.json"),
                        "--data",
                        str(out / "test.csv"),
                    ]
                )
                == 0
            )
            elapsed = time.perf_counter() - started
            assert elapsed < 1800.0, f"seed {seed} took {elapsed:.0f}s"

            trace_lines = (out / "RF_RFE_trace.csv").read_text().count("\n")
            assert trace_lines == 1 + 1 + 500 * 8  # header + init + every move

            groups = json.loads((out / "groups.json").read_text())["groups"]
            rf_rfe = next(g for g in groups if g["name"] == "RF_RFE")
            eliminated.append(
                "noise1" not in rf_rfe["features"] and "noise2" not in rf_rfe["features"]
            )

            report = json.loads((out / "evaluate_RF_RFE_model.json").read_text())
            tuned_acc = report["scores"]["accuracy"]

            manifest = json.loads((out / "prepare_manifest.json").read_text())
            train = cli._load_prepared(out / "train.csv", manifest)
            test = cli._load_prepared(out / "test.csv", manifest)
            train_g = dataprep.select_features(train, rf_rfe["features"])
            test_g = dataprep.select_features(test, rf_rfe["features"])
            smoted = dataprep.smote(train_g, 5, seed)
            default_model = gbt.train(
                smoted.values, smoted.labels, gbt.GbtParams(), seed=seed
            )
            pred = gbt.predict(default_model, test_g.values)
            cm = metrics.confusion(test_g.labels, pred, len(test_g.label_names))
            default_acc = metrics.macro_scores(cm)[0]
            deltas.append(tuned_acc - default_acc)
            print(
                f"\n  seed {seed}: tuned {tuned_acc:.4f} default {default_acc:.4f} "
                f"delta {tuned_acc - default_acc:+.4f} noise-eliminated {eliminated[-1]} "
                f"({elapsed:.0f}s)"
            )

        assert sum(d >= 0.02 for d in deltas) >= 4, deltas
        assert sum(eliminated) >= 4, eliminated


# ----------------------------------------------- 7. tuner comparison


def test_tuner_comparison():
    with gate("tuner-comparison"):
        space = benchmark_space()
        objective = multimodal()
        repeats = 20
        sa_best, asa_best = [], []
        for rep in range(repeats):
            best, _ = run_anneal(
                "sa",
                SaConfig(max_iters=500, initial_temp=1000.0, cooling_rate=0.8, moves_per_iter=8),
                space,
                objective,
                np.random.default_rng([rep, 0]),
            )
            sa_best.append(best.fitness)
            best, _ = run_anneal(
                "asa",
                AsaConfig(max_iters=500, t_min=2.0, beta=2.0, moves_per_iter=8),
                space,
                objective,
                np.random.default_rng([rep, 1]),
            )
            asa_best.append(best.fitness)
        budget = 1 + 500 * 8
        levels = int(math.sqrt(budget))
        grid = {s.name: list(np.linspace(s.lower, s.upper, levels)) for s in space}
        grid_best, _ = run_grid(grid, objective)

        sa_mean, asa_mean = float(np.mean(sa_best)), float(np.mean(asa_best))
        print("\n  tuner comparison on the multimodal objective (20 repeats):")
        print(f"  {'tuner':<6}{'mean_best':>12}{'std':>10}")
        print(f"  {'asa':<6}{asa_mean:>12.6f}{float(np.std(asa_best)):>10.6f}")
        print(f"  {'sa':<6}{sa_mean:>12.6f}{float(np.std(sa_best)):>10.6f}")
        print(f"  {'grid':<6}{grid_best.fitness:>12.6f}{0.0:>10.6f}")
        assert asa_mean >= sa_mean - 0.01


# --------------------------------------------------- 8. smote balance


def test_smote_balance():
    with gate("smote-balance"):
        rng = np.random.default_rng(9)
        for trial in range(25):
            k_classes = int(rng.integers(2, 5))
            counts = rng.integers(2, 40, size=k_classes)
            labels = np.repeat(np.arange(k_classes), counts)
            values = rng.normal(0, 1, size=(labels.size, int(rng.integers(2, 5))))
            data = dataprep.Dataset(
                columns=[dataprep.Column(f"x{j}", "numeric") for j in range(values.shape[1])],
                values=values,
                missing=np.zeros(values.shape, dtype=bool),
                labels=labels.copy(),
                label_name="y",
                label_names=[str(c) for c in range(k_classes)],
            )
            out = dataprep.smote(data, k=3, seed=trial)
            balanced = np.bincount(out.labels)
            assert (balanced == counts.max()).all()

            for idx in range(labels.size, out.n_rows):
                row = out.values[idx]
                c = out.labels[idx]
                parents = values[labels == c]
                on_segment = False
                for a in range(len(parents)):
                    diffs = parents - parents[a]
                    rel = row - parents[a]
                    for b in range(len(parents)):
                        if a == b:
                            continue
                        denom = diffs[b] @ diffs[b]
                        if denom == 0:
                            continue
                        u = (rel @ diffs[b]) / denom
                        if -1e-12 <= u <= 1 + 1e-12 and np.allclose(
                            rel, u * diffs[b], atol=1e-9
                        ):
                            on_segment = True
                            break
                    if on_segment:
                        break
                assert on_segment
        # already balanced inputs stay untouched
        even = dataprep.Dataset(
            columns=[dataprep.Column("x", "numeric")],
            values=rng.normal(0, 1, size=(40, 1)),
            missing=np.zeros((40, 1), dtype=bool),
            labels=np.repeat([0, 1], 20),
            label_name="y",
            label_names=["0", "1"],
        )
        assert dataprep.smote(even, k=3, seed=0).n_rows == 40


# ----------------------------------------------------------- 9. replay


def test_replay_byte_identical(tmp_path):
    with gate("replay"):
        csv_path, schema_path, _, _ = make_synthetic(
            tmp_path,
            n_rows=260,
            n_informative=4,
            n_categorical=1,
            n_noise=1,
            missing_rate=0.1,
            label_noise=0.05,
            seed=3,
            name="replay",
        )
        (tmp_path / "space.ini").write_text(
            """
[n_estimators]
kind = integer
lower = 1
upper = 4
sd = 2

[learning_rate]
kind = float
lower = 0
upper = 1
init_lower = 0.05
sd = 1
""",
            encoding="utf-8",
        )

        config = tmp_path / "run.ini"
        config.write_text(
            f"""
[run]
seed = 21
output_dir = {tmp_path}/out

[data]
csv = {csv_path}
schema = {schema_path}

[prepare]
impute_k = 3

[split]
test_fraction = 0.25
val_fraction = 0.25

[select]
methods = dt_sfm, all

[model]
kind = gbt

[tune]
kind = asa
max_iters = 6
moves_per_iter = 4
space = space.ini
smote_k = 3
""",
            encoding="utf-8",
        )

        def run_and_snapshot():
            assert cli.main(["prepare", "--config", str(config)]) == 0
            assert cli.main(["select", "--config", str(config)]) == 0
            assert cli.main(["tune", "--config", str(config)]) == 0
            out = tmp_path / "out"
            captured = {
                p.name: p.read_bytes()
                for p in sorted(out.iterdir())
                if p.suffix == ".csv" or p.name.endswith("_best.json")
            }
            manifest = json.loads((out / "run_manifest.json").read_text())
            return captured, manifest["config_hash"]

        first, hash_one = run_and_snapshot()
        second, hash_two = run_and_snapshot()
        assert first == second
        assert hash_one == hash_two
        assert any(name.endswith("_trace.csv") for name in first)
