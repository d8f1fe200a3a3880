"""Command-line pipeline: prepare -> select -> tune -> evaluate, plus a
closed-form benchmark harness for the tuners.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
Every JSON artifact embeds the run's config hash and seed; CSV artifacts keep
their pinned schemas, so the run manifest records their names and hashes
instead.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import benchmarks, catencode, dataprep, featsel, gbt, metrics, tuner
from .config import RunConfig, load_run_config, load_schema, load_space
from .errors import AnnealBoostError, ConfigError, InputError
from .paramspace import Candidate

PREPARE_MANIFEST = "prepare_manifest.json"
GROUPS_MANIFEST = "groups.json"
RUN_MANIFEST = "run_manifest.json"

METHOD_LABELS = {
    "chi_skb": "Chi_SKB",
    "dt_sfm": "DT_SFM",
    "rf_sfm": "RF_SFM",
    "dt_rfe": "DT_RFE",
    "rf_rfe": "RF_RFE",
    "all": "X_all",
}


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg: RunConfig, doc: dict) -> dict:
    doc["config_hash"] = cfg.config_hash
    doc["seed"] = cfg.seed
    return doc


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _record_artifacts(cfg: RunConfig, command: str, paths: list) -> None:
    """Append artifact names + content hashes to the run manifest."""
    out = _out(cfg)
    manifest_path = out / RUN_MANIFEST
    doc = {"config_hash": cfg.config_hash, "seed": cfg.seed, "artifacts": {}}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            doc = json.load(fh)
    for p in paths:
        p = Path(p)
        doc["artifacts"][p.name] = {
            "command": command,
            "sha256": _file_sha256(p),
            "config_hash": cfg.config_hash,
            "seed": cfg.seed,
        }
    _write_json(manifest_path, doc)


# ---------------------------------------------------------------- prepare


def cmd_prepare(cfg: RunConfig, sample_n=None) -> int:
    if not cfg.csv_path or not cfg.schema_path:
        raise ConfigError("config must set [data] csv and schema")
    schema = load_schema(cfg.schema_path)
    data = dataprep.load_csv(cfg.csv_path, schema)
    if sample_n is None:
        sample_n = cfg.sample_n
    if sample_n > 0:
        data = dataprep.reservoir_sample(data, sample_n, cfg.seed)
    if cfg.label_mapping:
        data = dataprep.merge_labels(data, cfg.label_mapping)
    missing_stats = {
        c.name: float(frac)
        for c, frac in zip(data.columns, data.missing.mean(axis=0))
    }
    data, dropped = dataprep.drop_missing_columns(data, cfg.missing_drop_threshold)

    train, test = dataprep.split(data, cfg.split_spec())
    val = None
    if cfg.val_fraction > 0:
        inner = cfg.val_fraction / (1.0 - cfg.test_fraction)
        train, val = dataprep.split(
            train, dataprep.SplitSpec(inner, cfg.stratified, cfg.seed + 1)
        )

    train_raw = train
    train = dataprep.knn_impute(train, cfg.impute_k)
    test = dataprep.knn_impute(test, cfg.impute_k, donors=train_raw)
    if val is not None:
        val = dataprep.knn_impute(val, cfg.impute_k, donors=train_raw)

    scaling = {}
    if cfg.scale:
        train, scaling = dataprep.minmax_scale(train)
        test = dataprep.apply_scale(test, scaling)
        if val is not None:
            val = dataprep.apply_scale(val, scaling)

    out = _out(cfg)
    written = []
    for name, part in (("train", train), ("val", val), ("test", test)):
        if part is None:
            continue
        path = out / f"{name}.csv"
        dataprep.write_csv(part, path)
        written.append(path)

    manifest = _stamp(
        cfg,
        {
            "columns": [
                {"name": c.name, "role": c.role, "units": c.units}
                for c in train.columns
            ],
            "label_name": train.label_name,
            "label_names": train.label_names,
            "cat_codes": train.cat_codes,
            "dropped_columns": dropped,
            "missing_stats": missing_stats,
            "scaling": {k: list(v) for k, v in scaling.items()},
            "label_mapping": cfg.label_mapping,
            "row_counts": {
                "train": train.n_rows,
                "val": val.n_rows if val is not None else 0,
                "test": test.n_rows,
            },
        },
    )
    manifest_path = out / PREPARE_MANIFEST
    _write_json(manifest_path, manifest)
    _record_artifacts(cfg, "prepare", written + [manifest_path])
    print(
        f"prepared {train.n_rows} train / "
        f"{val.n_rows if val is not None else 0} val / {test.n_rows} test rows, "
        f"{len(train.columns)} features ({len(dropped)} dropped)"
    )
    return 0


def _load_prepared(path: Path, manifest: dict) -> dataprep.Dataset:
    """Reload a prepared CSV with the code dictionaries pinned by prepare."""
    schema = [
        dataprep.Column(c["name"], c["role"], c.get("units", ""))
        for c in manifest["columns"]
    ]
    schema.append(dataprep.Column(manifest["label_name"], dataprep.LABEL))
    data = dataprep.load_csv(path, schema)
    values = data.values.copy()
    cat_codes = {}
    for name, pinned in manifest["cat_codes"].items():
        j = data.column_index(name)
        lookup = {s: i for i, s in enumerate(pinned)}
        extended = list(pinned)
        remap = {}
        for code, s in enumerate(data.cat_codes[name]):
            if s not in lookup:
                lookup[s] = len(extended)
                extended.append(s)
            remap[code] = lookup[s]
        values[:, j] = [remap[int(v)] for v in data.values[:, j]]
        cat_codes[name] = extended
    label_lookup = {s: i for i, s in enumerate(manifest["label_names"])}
    try:
        labels = np.asarray(
            [label_lookup[data.label_names[v]] for v in data.labels], dtype=np.int64
        )
    except KeyError as exc:
        raise InputError(f"label {exc} not present in the prepare manifest") from exc
    return replace(
        data, values=values, labels=labels,
        label_names=list(manifest["label_names"]), cat_codes=cat_codes,
    )


def _read_manifest(cfg: RunConfig) -> dict:
    path = _out(cfg) / PREPARE_MANIFEST
    if not path.exists():
        raise InputError(f"{path} not found; run prepare first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ----------------------------------------------------------------- select


def cmd_select(cfg: RunConfig) -> int:
    manifest = _read_manifest(cfg)
    out = _out(cfg)
    train = _load_prepared(out / "train.csv", manifest)
    X = train.values
    y = train.labels
    names = train.feature_names
    numeric = set(train.numeric_names)

    groups = []
    for method in cfg.select_methods:
        label = METHOD_LABELS[method]
        if method == "chi_skb":
            binned = np.column_stack(
                [
                    featsel.equal_width_bins(X[:, j], cfg.chi_bins)
                    if names[j] in numeric
                    else X[:, j]
                    for j in range(X.shape[1])
                ]
            )
            scores = featsel.chi_square_scores(binned, y, names)
            group = featsel.select_k_best(scores, min(cfg.k_best, len(names)))
        elif method in ("dt_sfm", "rf_sfm"):
            n_trees = 1 if method == "dt_sfm" else cfg.rf_trees
            imp = featsel.gini_importance_forest(X, y, n_trees=n_trees, seed=cfg.seed)
            group = featsel.select_from_model(imp, "mean", names, name=label)
        elif method in ("dt_rfe", "rf_rfe"):
            fitter = "decision-tree" if method == "dt_rfe" else "random-forest"
            group = featsel.rfe(
                X,
                y,
                fitter=fitter,
                n_select=min(cfg.n_select, len(names) - 1),
                step=1,
                seed=cfg.seed,
                feature_names=names,
                n_trees=cfg.rf_trees,
                name=label,
            )
        elif method == "all":
            group = featsel.DataGroup(label, tuple(names), {"method": "all"})
        else:
            raise ConfigError(f"unknown selection method {method!r}")
        groups.append(group)

    groups_doc = _stamp(
        cfg,
        {
            "groups": [
                {
                    "name": g.name,
                    "features": list(g.features),
                    "provenance": g.provenance,
                }
                for g in groups
            ]
        },
    )
    groups_path = out / GROUPS_MANIFEST
    _write_json(groups_path, groups_doc)

    # Selection-count summary: features x methods grid with totals.
    summary_path = out / "selection_summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        method_names = [g.name for g in groups]
        fh.write("feature," + ",".join(method_names) + ",total\n")
        for name in names:
            marks = [1 if name in g.features else 0 for g in groups]
            fh.write(f"{name}," + ",".join(map(str, marks)) + f",{sum(marks)}\n")
        totals = [len(g.features) for g in groups]
        fh.write("total," + ",".join(map(str, totals)) + ",\n")
    _record_artifacts(cfg, "select", [groups_path, summary_path])

    for g in groups:
        print(f"{g.name}: {len(g.features)} features")
    return 0


# ------------------------------------------------------------------- tune


def _matrix_dataset(X: np.ndarray, y: np.ndarray) -> dataprep.Dataset:
    cols = [dataprep.Column(f"e{j}", dataprep.NUMERIC) for j in range(X.shape[1])]
    n_classes = int(y.max()) + 1
    return dataprep.Dataset(
        columns=cols,
        values=np.asarray(X, dtype=np.float64),
        missing=np.zeros(X.shape, dtype=bool),
        labels=np.asarray(y, dtype=np.int64),
        label_name="label",
        label_names=[str(c) for c in range(n_classes)],
    )


def _accuracy_objective(train_fn, X_eval: np.ndarray, y_eval: np.ndarray, n_classes: int):
    def evaluate(cand: Candidate) -> float:
        model = train_fn(cand)
        pred = gbt.predict(model, X_eval)
        cm = metrics.confusion(y_eval, pred, n_classes)
        return metrics.macro_scores(cm)[0]

    return evaluate


def _dump_encoded_csv(path, encoder, train_g, X_enc, y) -> None:
    names = [train_g.columns[j].name for j in encoder.numeric]
    for j in encoder.categorical:
        base = train_g.columns[j].name
        names += [f"{base}_ts{k}" for k in range(encoder.n_classes)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names + [train_g.label_name]) + "\n")
        for i in range(X_enc.shape[0]):
            cells = [repr(float(v)) for v in X_enc[i]]
            fh.write(",".join(cells + [train_g.label_names[y[i]]]) + "\n")


def _group_objective(cfg: RunConfig, group_features, train, eval_part, dump_path=None):
    """Objective + final-model factory for one data group.

    Oversampling touches only the training partition; the evaluation
    partition goes through untouched.
    """
    train_g = dataprep.select_features(train, list(group_features))
    eval_g = dataprep.select_features(eval_part, list(group_features))
    y = train_g.labels
    n_classes = len(train_g.label_names)

    if cfg.model_kind == "cab":
        cat_idx = [
            j for j, c in enumerate(train_g.columns) if c.role == dataprep.CATEGORICAL
        ]
        ts_cfg = catencode.TsConfig(cfg.ts_prior, cfg.ts_prior_weight, cfg.seed)
        encoder = catencode.TsEncoder(ts_cfg, cat_idx, n_classes, len(group_features))
        encoder.fit(train_g.values, y)
        X_enc = encoder.encode_training(train_g.values, y)
        if dump_path is not None:
            _dump_encoded_csv(dump_path, encoder, train_g, X_enc, y)
        smoted = dataprep.smote(_matrix_dataset(X_enc, y), cfg.smote_k, cfg.seed)
        X_fit, y_fit = smoted.values, smoted.labels
        X_eval = encoder.encode_apply(eval_g.values)

        def train_fn(cand: Candidate):
            params = catencode.CabParams.from_mapping(cand.values)
            model = gbt._train_boosted(
                X_fit,
                y_fit,
                gbt.GbtParams(
                    n_estimators=cfg.cab_max_rounds,
                    max_depth=params.tree_depth,
                    learning_rate=params.learning_rate,
                    l2_reg=params.l2_reg,
                    l1_reg=0.0,
                    gamma=0.0,
                    max_delta_step=0.0,
                    n_parallel_trees=1,
                ),
                validation=(X_eval, eval_g.labels),
                seed=cfg.seed,
                patience=cfg.patience,
                split_gain_noise=params.random_strength,
                row_weight_temperature=params.bagging_temperature,
            )
            model.encoder = encoder
            return model

    else:
        smoted = dataprep.smote(train_g, cfg.smote_k, cfg.seed)
        X_fit, y_fit = smoted.values, smoted.labels
        X_eval = eval_g.values

        def train_fn(cand: Candidate):
            params = gbt.GbtParams.from_mapping(cand.values)
            return gbt.train(X_fit, y_fit, params, seed=cfg.seed)

    objective = tuner.Objective(
        _accuracy_objective(train_fn, X_eval, eval_g.labels, n_classes)
    )
    return objective, train_fn


def _validate_grid(cfg: RunConfig, space) -> dict:
    if not cfg.grid:
        raise ConfigError("grid tuner needs a [grid] section")
    if space is not None:
        by_name = {s.name: s for s in space}
        for name, values in cfg.grid.items():
            spec = by_name.get(name)
            if spec is None:
                continue
            for v in values:
                if not spec.lower <= v <= spec.upper:
                    raise ConfigError(
                        f"grid value {v} for {name!r} outside "
                        f"[{spec.lower}, {spec.upper}]"
                    )
    return cfg.grid


def cmd_tune(cfg: RunConfig) -> int:
    manifest = _read_manifest(cfg)
    out = _out(cfg)
    train = _load_prepared(out / "train.csv", manifest)
    test = _load_prepared(out / "test.csv", manifest)
    val_path = out / "val.csv"
    eval_part = _load_prepared(val_path, manifest) if val_path.exists() else test

    groups_path = out / GROUPS_MANIFEST
    if not groups_path.exists():
        raise InputError(f"{groups_path} not found; run select first")
    with open(groups_path, encoding="utf-8") as fh:
        groups_doc = json.load(fh)
    # keep manifest positions so per-group rng streams survive group filtering
    groups = list(enumerate(groups_doc["groups"]))
    if cfg.groups:
        wanted = set(cfg.groups)
        groups = [(i, g) for i, g in groups if g["name"] in wanted]
        if not groups:
            raise ConfigError(f"none of the requested groups {cfg.groups} exist")

    space = load_space(cfg.space_path) if cfg.space_path else None
    if cfg.tuner_kind in ("sa", "asa") and space is None:
        raise ConfigError("sa/asa tuners need [tune] space = <space file>")
    grid = _validate_grid(cfg, space) if cfg.tuner_kind == "grid" else None

    failures = []
    written = []
    for idx, group in groups:
        name = group["name"]
        try:
            dump_path = (
                out / f"{name}_encoded.csv"
                if cfg.dump_encoded and cfg.model_kind == "cab"
                else None
            )
            objective, train_fn = _group_objective(
                cfg, group["features"], train, eval_part, dump_path
            )
            rng = np.random.default_rng([cfg.seed, idx])
            if cfg.tuner_kind == "sa":
                best, trace = tuner.run_anneal(
                    tuner.SA,
                    tuner.SaConfig(
                        cfg.max_iters,
                        cfg.initial_temp,
                        cfg.cooling_rate,
                        cfg.moves_per_iter,
                    ),
                    space,
                    objective,
                    rng,
                )
            elif cfg.tuner_kind == "asa":
                best, trace = tuner.run_anneal(
                    tuner.ASA,
                    tuner.AsaConfig(
                        cfg.max_iters, cfg.t_min, cfg.beta, cfg.moves_per_iter
                    ),
                    space,
                    objective,
                    rng,
                )
            else:
                best, trace = tuner.run_grid(grid, objective)

            trace_path = out / f"{name}_trace.csv"
            trace.write_csv(trace_path)
            best_doc = _stamp(
                cfg,
                {
                    "group": name,
                    "model_kind": cfg.model_kind,
                    "tuner": cfg.tuner_kind,
                    "best_params": {k: float(v) for k, v in best.values.items()},
                    "accuracy": best.fitness,
                    "n_evaluations": len(trace),
                },
            )
            best_path = out / f"{name}_best.json"
            _write_json(best_path, best_doc)

            model = train_fn(best)
            model.feature_names = list(group["features"])
            model_path = out / f"{name}_model.json"
            catencode.save_model(model, model_path)
            written.extend([trace_path, best_path, model_path])
            print(f"{name}: best accuracy {best.fitness:.4f} ({len(trace)} evaluations)")
        except Exception as exc:  # a broken group must not sink the others
            failures.append((name, exc))
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
    if written:
        _record_artifacts(cfg, "tune", written)
    if failures and len(failures) == len(groups):
        raise AnnealBoostError("tuning failed for every group")
    return 0


# --------------------------------------------------------------- evaluate


def cmd_evaluate(cfg: RunConfig, model_path: str, data_path: str) -> int:
    manifest = _read_manifest(cfg)
    model = catencode.load_model(model_path)
    data = _load_prepared(Path(data_path), manifest)
    if model.feature_names:
        data = dataprep.select_features(data, model.feature_names)
    if model.encoder is not None:
        pred = catencode.cab_predict(model, data.values)
    else:
        pred = gbt.predict(model, data.values)
    cm = metrics.confusion(data.labels, pred, model.n_classes)
    scores = metrics.scores_dict(cm)

    out = _out(cfg)
    report = _stamp(
        cfg,
        {
            "model": Path(model_path).name,
            "data": Path(data_path).name,
            "scores": scores,
            "confusion_matrix": cm.counts.tolist(),
            "n_rows": int(data.n_rows),
        },
    )
    report_path = out / f"evaluate_{Path(model_path).stem}.json"
    _write_json(report_path, report)
    _record_artifacts(cfg, "evaluate", [report_path])

    print(f"rows evaluated: {data.n_rows}")
    print("confusion matrix (actual rows x predicted columns):")
    for row in cm.counts:
        print("  " + " ".join(f"{v:6d}" for v in row))
    for key in ("accuracy", "precision", "recall", "f1"):
        print(f"{key:>9}: {scores[key]:.4f}")
    return 0


# -------------------------------------------------------------- benchmark


def _evals_to_best(trace: tuner.TuneTrace) -> int:
    best = trace.records[-1].best_so_far
    for i, rec in enumerate(trace.records):
        if rec.fitness == best:
            return i + 1
    return len(trace.records)


def cmd_benchmark(
    objectives: list,
    tuners: list,
    repeats: int,
    iters: int,
    moves: int,
    seed: int,
    out_path=None,
) -> int:
    space = benchmarks.benchmark_space()
    budget = 1 + iters * moves
    levels = max(2, int(np.sqrt(budget)))
    grid = {
        s.name: list(np.linspace(s.lower, s.upper, levels)) for s in space
    }
    rows = []
    for obj_idx, obj_name in enumerate(objectives):
        evaluate, best_reachable = benchmarks.make_objective(obj_name)
        for tuner_kind in tuners:
            bests, evals = [], []
            for rep in range(repeats):
                rng = np.random.default_rng([seed, obj_idx, rep])
                if tuner_kind == "sa":
                    best, trace = tuner.run_anneal(
                        tuner.SA,
                        tuner.SaConfig(iters, moves_per_iter=moves),
                        space,
                        evaluate,
                        rng,
                    )
                elif tuner_kind == "asa":
                    best, trace = tuner.run_anneal(
                        tuner.ASA,
                        tuner.AsaConfig(iters, moves_per_iter=moves),
                        space,
                        evaluate,
                        rng,
                    )
                elif tuner_kind == "grid":
                    best, trace = tuner.run_grid(grid, evaluate)
                else:
                    raise ConfigError(f"unknown tuner {tuner_kind!r}")
                bests.append(best.fitness)
                evals.append(_evals_to_best(trace))
            rows.append(
                {
                    "objective": obj_name,
                    "tuner": tuner_kind,
                    "repeats": repeats,
                    "mean_best": float(np.mean(bests)),
                    "std_best": float(np.std(bests)),
                    "mean_evals_to_best": float(np.mean(evals)),
                    "best_reachable": best_reachable,
                }
            )

    header = f"{'objective':<12}{'tuner':<8}{'mean_best':>12}{'std_best':>12}{'evals_to_best':>16}"
    print(header)
    for r in rows:
        print(
            f"{r['objective']:<12}{r['tuner']:<8}{r['mean_best']:>12.5f}"
            f"{r['std_best']:>12.5f}{r['mean_evals_to_best']:>16.1f}"
        )
    if out_path:
        _write_json(Path(out_path), {"seed": seed, "results": rows})
    return 0


# ------------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annealboost",
        description="Annealing-driven hyperparameter tuning for boosted trees",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("prepare", "select", "tune"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config file")
        if name == "prepare":
            p.add_argument(
                "--sample-n",
                type=int,
                default=None,
                help="seeded reservoir sample size (overrides the config)",
            )

    p = sub.add_parser("evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True, help="serialized model JSON")
    p.add_argument("--data", required=True, help="prepared dataset CSV")

    p = sub.add_parser("benchmark")
    p.add_argument("--objectives", default="sphere,multimodal,plateau")
    p.add_argument("--tuners", default="sa,asa,grid")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--moves", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write results JSON here")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "benchmark":
            return cmd_benchmark(
                [s.strip() for s in args.objectives.split(",") if s.strip()],
                [s.strip() for s in args.tuners.split(",") if s.strip()],
                args.repeats,
                args.iters,
                args.moves,
                args.seed,
                args.out,
            )
        cfg = load_run_config(args.config)
        seed_override = os.environ.get("ANNEALBOOST_SEED")
        if seed_override is not None:
            cfg.seed = int(seed_override)
        if args.command == "prepare":
            return cmd_prepare(cfg, args.sample_n)
        if args.command == "select":
            return cmd_select(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.model, args.data)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except AnnealBoostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:
        traceback.print_exc()
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
