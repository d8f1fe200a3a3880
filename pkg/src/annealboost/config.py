"""Run configuration: one INI-style file with flat per-module sections,
plus the JSON column-schema file and the INI parameter-space file.

Every artifact a run writes is stamped with the hash computed here over the
raw bytes of the config, schema, and space files, so a run can be replayed
and verified byte for byte.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .dataprep import CATEGORICAL, LABEL, NUMERIC, TIMESTAMP, Column, SplitSpec
from .errors import ConfigError
from .paramspace import FLOAT, INTEGER, ParameterSpec, make_spec

KNOWN_METHODS = ("chi_skb", "dt_sfm", "rf_sfm", "dt_rfe", "rf_rfe", "all")


def load_schema(path) -> list[Column]:
    """Column roles from a JSON document: {"columns": [{"name", "role", "units"?}]}."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema {path} is not valid JSON: {exc}") from exc
    columns = []
    for entry in doc.get("columns", []):
        role = entry.get("role")
        if role not in (NUMERIC, CATEGORICAL, LABEL, TIMESTAMP):
            raise ConfigError(f"schema column {entry.get('name')!r}: bad role {role!r}")
        columns.append(Column(entry["name"], role, entry.get("units", "")))
    if not columns:
        raise ConfigError(f"schema {path} declares no columns")
    return columns


def load_space(path) -> list[ParameterSpec]:
    """Parameter space from an INI file: one section per parameter.

    Keys: kind (integer|float), lower, upper, optional init_lower/init_upper
    (default: the hard bounds) and sd (default: 1 for unit ranges, else 2).
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read parameter space file {path}")
    space = []
    for section in parser.sections():
        sec = parser[section]
        kind = sec.get("kind", FLOAT).strip()
        if kind not in (INTEGER, FLOAT):
            raise ConfigError(f"space parameter {section!r}: bad kind {kind!r}")
        try:
            lower = float(sec["lower"])
            upper = float(sec["upper"])
        except KeyError as exc:
            raise ConfigError(f"space parameter {section!r}: missing {exc}") from exc
        space.append(
            make_spec(
                section,
                kind,
                lower,
                upper,
                init_lower=float(sec["init_lower"]) if "init_lower" in sec else None,
                init_upper=float(sec["init_upper"]) if "init_upper" in sec else None,
                perturb_sd=float(sec["sd"]) if "sd" in sec else None,
            )
        )
    if not space:
        raise ConfigError(f"parameter space file {path} declares no parameters")
    return space


def _parse_mapping(text: str) -> dict:
    mapping = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"label mapping entry {part!r} is not old:new")
        old, new = part.split(":", 1)
        mapping[old.strip()] = new.strip()
    return mapping


def _parse_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


@dataclass
class RunConfig:
    """Everything one pipeline run needs, flattened from the config file."""

    seed: int = 0
    output_dir: str = "out"
    csv_path: str = ""
    schema_path: str = ""
    sample_n: int = 0  # 0 = keep all rows
    impute_k: int = 5
    missing_drop_threshold: float = 0.9
    scale: bool = True
    label_mapping: Optional[dict] = None
    test_fraction: float = 0.2
    val_fraction: float = 0.2  # 0 = two-way protocol (tune on the test partition)
    stratified: bool = True
    select_methods: list = field(default_factory=lambda: list(KNOWN_METHODS))
    k_best: int = 10
    n_select: int = 10
    rf_trees: int = 100
    chi_bins: int = 10
    model_kind: str = "gbt"  # gbt | cab
    tuner_kind: str = "asa"  # sa | asa | grid
    max_iters: int = 500
    moves_per_iter: int = 8
    initial_temp: float = 1000.0
    cooling_rate: float = 0.8
    t_min: float = 2.0
    beta: float = 2.0
    smote_k: int = 5
    space_path: Optional[str] = None
    groups: Optional[list] = None  # None = tune every group in the manifest
    grid: Optional[dict] = None
    dump_encoded: bool = False  # debug export of the TS-encoded training matrix
    ts_prior: float = 0.5
    ts_prior_weight: float = 1.0
    cab_max_rounds: int = 100
    patience: int = 20
    config_hash: str = ""

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.test_fraction, self.stratified, self.seed)


def _hash_files(*paths) -> str:
    digest = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        path = Path(p)
        if path.exists():
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = RunConfig()
    base = Path(path).parent

    def resolve(p: str) -> str:
        candidate = Path(p)
        return str(candidate if candidate.is_absolute() else base / candidate)

    if parser.has_section("run"):
        sec = parser["run"]
        cfg.seed = sec.getint("seed", cfg.seed)
        if "output_dir" in sec:
            cfg.output_dir = resolve(sec["output_dir"])
    if parser.has_section("data"):
        sec = parser["data"]
        if "csv" in sec:
            cfg.csv_path = resolve(sec["csv"])
        if "schema" in sec:
            cfg.schema_path = resolve(sec["schema"])
        cfg.sample_n = sec.getint("sample_n", cfg.sample_n)
    if parser.has_section("prepare"):
        sec = parser["prepare"]
        cfg.impute_k = sec.getint("impute_k", cfg.impute_k)
        cfg.missing_drop_threshold = sec.getfloat(
            "missing_drop_threshold", cfg.missing_drop_threshold
        )
        cfg.scale = sec.getboolean("scale", cfg.scale)
        if "label_mapping" in sec:
            cfg.label_mapping = _parse_mapping(sec["label_mapping"])
    if parser.has_section("split"):
        sec = parser["split"]
        cfg.test_fraction = sec.getfloat("test_fraction", cfg.test_fraction)
        cfg.val_fraction = sec.getfloat("val_fraction", cfg.val_fraction)
        cfg.stratified = sec.getboolean("stratified", cfg.stratified)
    if parser.has_section("select"):
        sec = parser["select"]
        if "methods" in sec:
            cfg.select_methods = _parse_list(sec["methods"])
            for m in cfg.select_methods:
                if m not in KNOWN_METHODS:
                    raise ConfigError(f"unknown selection method {m!r}")
        cfg.k_best = sec.getint("k_best", cfg.k_best)
        cfg.n_select = sec.getint("n_select", cfg.n_select)
        cfg.rf_trees = sec.getint("rf_trees", cfg.rf_trees)
        cfg.chi_bins = sec.getint("chi_bins", cfg.chi_bins)
    if parser.has_section("model"):
        sec = parser["model"]
        cfg.model_kind = sec.get("kind", cfg.model_kind).strip()
        if cfg.model_kind not in ("gbt", "cab"):
            raise ConfigError(f"unknown model kind {cfg.model_kind!r}")
        cfg.ts_prior = sec.getfloat("ts_prior", cfg.ts_prior)
        cfg.ts_prior_weight = sec.getfloat("ts_prior_weight", cfg.ts_prior_weight)
        cfg.cab_max_rounds = sec.getint("cab_max_rounds", cfg.cab_max_rounds)
        cfg.patience = sec.getint("patience", cfg.patience)
    if parser.has_section("tune"):
        sec = parser["tune"]
        cfg.tuner_kind = sec.get("kind", cfg.tuner_kind).strip()
        if cfg.tuner_kind not in ("sa", "asa", "grid"):
            raise ConfigError(f"unknown tuner kind {cfg.tuner_kind!r}")
        cfg.max_iters = sec.getint("max_iters", cfg.max_iters)
        cfg.moves_per_iter = sec.getint("moves_per_iter", cfg.moves_per_iter)
        cfg.initial_temp = sec.getfloat("initial_temp", cfg.initial_temp)
        cfg.cooling_rate = sec.getfloat("cooling_rate", cfg.cooling_rate)
        cfg.t_min = sec.getfloat("t_min", cfg.t_min)
        cfg.beta = sec.getfloat("beta", cfg.beta)
        cfg.smote_k = sec.getint("smote_k", cfg.smote_k)
        cfg.dump_encoded = sec.getboolean("dump_encoded", cfg.dump_encoded)
        if "space" in sec:
            cfg.space_path = resolve(sec["space"])
        if "groups" in sec:
            cfg.groups = _parse_list(sec["groups"])
    if parser.has_section("grid"):
        cfg.grid = {
            name: [float(v) for v in _parse_list(parser["grid"][name])]
            for name in parser["grid"]
        }

    cfg.config_hash = _hash_files(path, cfg.schema_path or None, cfg.space_path)
    return cfg
