"""Tabular ingestion and preprocessing: typed CSV loading, timestamp
expansion, high-missingness column dropping, KNN imputation, min-max scaling,
label merging, stratified splitting, and minority oversampling.

A :class:`Dataset` is immutable by convention: every operation returns a new
instance. Feature values live in one float matrix (categorical columns hold
dense integer codes with a code-to-string dictionary on the side) plus a
per-cell missing mask; labels are small contiguous integers.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"
TIMESTAMP = "timestamp"

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class Column:
    name: str
    role: str
    units: str = ""


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    stratified: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")


@dataclass
class Dataset:
    columns: list[Column]  # feature columns (numeric + categorical)
    values: np.ndarray  # (n_rows, n_features) float64
    missing: np.ndarray  # (n_rows, n_features) bool
    labels: np.ndarray  # (n_rows,) int64
    label_name: str
    label_names: list[str]  # class index -> display string
    cat_codes: dict = field(default_factory=dict)  # column name -> code list

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def numeric_names(self) -> list[str]:
        return [c.name for c in self.columns if c.role == NUMERIC]

    @property
    def categorical_names(self) -> list[str]:
        return [c.name for c in self.columns if c.role == CATEGORICAL]

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise InputError(f"no feature column named {name!r}")

    def take_rows(self, idx: np.ndarray) -> "Dataset":
        return replace(
            self,
            values=self.values[idx].copy(),
            missing=self.missing[idx].copy(),
            labels=self.labels[idx].copy(),
        )


def _parse_timestamp(text: str) -> Optional[datetime]:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        return None


def load_csv(path, schema: Sequence[Column]) -> Dataset:
    """Load a typed dataset; header must carry exactly the schema's names.

    Blank or "NA" cells and unparseable numerics become missing. Categorical
    values are interned as integer codes in order of first appearance.
    Timestamp columns are expanded in place into numeric month / weekday /
    hour columns (minutes and seconds are discarded).
    """
    schema = list(schema)
    labels_cols = [c for c in schema if c.role == LABEL]
    if len(labels_cols) != 1:
        raise ConfigError("schema must declare exactly one label column")
    label_col = labels_cols[0]

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if set(header) != {c.name for c in schema}:
            raise InputError(
                f"{path}: header {header} does not match schema names"
            )
        rows = list(reader)

    col_pos = {name: header.index(name) for name in header}

    out_columns: list[Column] = []
    out_cells: list[np.ndarray] = []
    out_missing: list[np.ndarray] = []
    cat_codes: dict = {}
    n = len(rows)

    for col in schema:
        raw = [row[col_pos[col.name]] for row in rows]
        if col.role == LABEL:
            continue
        if col.role == NUMERIC:
            vals = np.zeros(n)
            miss = np.zeros(n, dtype=bool)
            for i, cell in enumerate(raw):
                if cell in MISSING_TOKENS:
                    miss[i] = True
                    continue
                try:
                    vals[i] = float(cell)
                except ValueError:
                    miss[i] = True
            out_columns.append(col)
            out_cells.append(vals)
            out_missing.append(miss)
        elif col.role == CATEGORICAL:
            codes = {}
            order: list[str] = []
            vals = np.zeros(n)
            for i, cell in enumerate(raw):
                if cell not in codes:
                    codes[cell] = len(order)
                    order.append(cell)
                vals[i] = codes[cell]
            out_columns.append(col)
            out_cells.append(vals)
            out_missing.append(np.zeros(n, dtype=bool))
            cat_codes[col.name] = order
        elif col.role == TIMESTAMP:
            parts = {"month": np.zeros(n), "weekday": np.zeros(n), "hour": np.zeros(n)}
            miss = np.zeros(n, dtype=bool)
            for i, cell in enumerate(raw):
                ts = None if cell in MISSING_TOKENS else _parse_timestamp(cell)
                if ts is None:
                    miss[i] = True
                    continue
                parts["month"][i] = ts.month
                parts["weekday"][i] = ts.weekday()
                parts["hour"][i] = ts.hour
            for suffix in ("month", "weekday", "hour"):
                out_columns.append(Column(f"{col.name}_{suffix}", NUMERIC, col.units))
                out_cells.append(parts[suffix].copy())
                out_missing.append(miss.copy())
        else:
            raise ConfigError(f"unknown column role {col.role!r} for {col.name!r}")

    label_raw = [row[col_pos[label_col.name]] for row in rows]
    label_map: dict = {}
    label_order: list[str] = []
    labels = np.zeros(n, dtype=np.int64)
    for i, cell in enumerate(label_raw):
        if cell in MISSING_TOKENS:
            raise InputError(f"{path}: missing label value at data row {i}")
        if cell not in label_map:
            label_map[cell] = len(label_order)
            label_order.append(cell)
        labels[i] = label_map[cell]

    values = (
        np.column_stack(out_cells) if out_cells else np.zeros((n, 0))
    )
    missing = (
        np.column_stack(out_missing) if out_missing else np.zeros((n, 0), dtype=bool)
    )
    return Dataset(
        columns=out_columns,
        values=values,
        missing=missing,
        labels=labels,
        label_name=label_col.name,
        label_names=label_order,
        cat_codes=cat_codes,
    )


def write_csv(data: Dataset, path) -> None:
    """Round-trippable CSV: categorical codes and labels as their strings,
    numerics at full precision, missing cells blank."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.feature_names + [data.label_name])
        for i in range(data.n_rows):
            row = []
            for j, col in enumerate(data.columns):
                if data.missing[i, j]:
                    row.append("")
                elif col.role == CATEGORICAL:
                    row.append(data.cat_codes[col.name][int(data.values[i, j])])
                else:
                    row.append(repr(float(data.values[i, j])))
            row.append(data.label_names[data.labels[i]])
            writer.writerow(row)


def reservoir_sample(data: Dataset, n: int, seed: int = 0) -> Dataset:
    """Seeded reservoir sample of n rows (algorithm R); identity when n >= rows."""
    if n <= 0:
        raise ConfigError("sample size must be positive")
    if n >= data.n_rows:
        return data
    rng = np.random.default_rng(seed)
    reservoir = list(range(n))
    for i in range(n, data.n_rows):
        j = int(rng.integers(0, i + 1))
        if j < n:
            reservoir[j] = i
    return data.take_rows(np.asarray(sorted(reservoir)))


def drop_missing_columns(data: Dataset, threshold: float = 0.9) -> tuple[Dataset, list[str]]:
    """Remove feature columns whose missing fraction exceeds the threshold."""
    frac = data.missing.mean(axis=0)
    keep = [j for j in range(len(data.columns)) if frac[j] <= threshold]
    dropped = [data.columns[j].name for j in range(len(data.columns)) if frac[j] > threshold]
    if not dropped:
        return data, []
    kept_cols = [data.columns[j] for j in keep]
    return (
        replace(
            data,
            columns=kept_cols,
            values=data.values[:, keep].copy(),
            missing=data.missing[:, keep].copy(),
            cat_codes={c.name: data.cat_codes[c.name] for c in kept_cols if c.role == CATEGORICAL},
        ),
        dropped,
    )


def knn_impute(data: Dataset, k: int, donors: Optional[Dataset] = None) -> Dataset:
    """Fill missing numeric cells with the mean of the k nearest donor rows.

    Distance is squared Euclidean over the numeric columns observed in both
    rows (no rescaling by the overlap size); rows unobserved in the target
    column are never candidates, and distance ties break toward the lower
    donor row index. ``donors`` defaults to the dataset itself, in which case
    a row cannot donate to itself.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    self_donors = donors is None
    donors = data if donors is None else donors
    if donors.feature_names != data.feature_names:
        raise InputError("donor dataset has different columns")

    num_idx = [j for j, c in enumerate(data.columns) if c.role == NUMERIC]
    values = data.values.copy()
    missing = data.missing.copy()

    tgt_vals = data.values[:, num_idx]
    tgt_obs = ~data.missing[:, num_idx]
    don_vals = donors.values[:, num_idx]
    don_obs = ~donors.missing[:, num_idx]

    needs = np.nonzero(missing[:, num_idx].any(axis=1))[0]
    for i in needs:
        both = don_obs & tgt_obs[i]
        diff = np.where(both, don_vals - tgt_vals[i], 0.0)
        dist = (diff * diff).sum(axis=1)
        dist = np.where(both.any(axis=1), dist, np.inf)
        if self_donors:
            dist[i] = np.inf
        order = np.argsort(dist, kind="stable")
        for jj, j in enumerate(num_idx):
            if not missing[i, j]:
                continue
            candidates = order[don_obs[order, jj]]
            if self_donors:
                candidates = candidates[candidates != i]
            if candidates.size < k:
                raise InputError(
                    f"column {data.columns[j].name!r}: only {candidates.size} "
                    f"observed donor rows, need k={k}"
                )
            nearest = candidates[:k]
            values[i, j] = float(don_vals[nearest, jj].mean())
            missing[i, j] = False
    return replace(data, values=values, missing=missing)


def minmax_scale(data: Dataset) -> tuple[Dataset, dict]:
    """Map each numeric column onto [0, 1]; constant columns map to 0.

    Returns the per-column (min, max) pairs for applying the same transform
    to future data. Numeric columns must be fully observed.
    """
    values = data.values.copy()
    params: dict = {}
    for j, col in enumerate(data.columns):
        if col.role != NUMERIC:
            continue
        if data.missing[:, j].any():
            raise InputError(f"column {col.name!r} still has missing values")
        lo = float(values[:, j].min())
        hi = float(values[:, j].max())
        params[col.name] = (lo, hi)
        if hi > lo:
            values[:, j] = (values[:, j] - lo) / (hi - lo)
        else:
            values[:, j] = 0.0
    return replace(data, values=values), params


def apply_scale(data: Dataset, params: dict) -> Dataset:
    """Apply previously fitted (min, max) pairs; out-of-range values may leave [0, 1]."""
    values = data.values.copy()
    for j, col in enumerate(data.columns):
        if col.name not in params:
            continue
        lo, hi = params[col.name]
        if hi > lo:
            values[:, j] = (values[:, j] - lo) / (hi - lo)
        else:
            values[:, j] = 0.0
    return replace(data, values=values)


def unscale(data: Dataset, params: dict) -> Dataset:
    """Inverse of :func:`apply_scale` for non-constant columns."""
    values = data.values.copy()
    for j, col in enumerate(data.columns):
        if col.name not in params:
            continue
        lo, hi = params[col.name]
        if hi > lo:
            values[:, j] = values[:, j] * (hi - lo) + lo
        else:
            values[:, j] = lo
    return replace(data, values=values)


def merge_labels(data: Dataset, mapping: dict) -> Dataset:
    """Remap label classes (by display string) and re-densify the indices.

    New class indices follow first appearance when scanning old classes in
    ascending index order; the mapping must cover every observed label.
    """
    observed = set(np.unique(data.labels))
    for idx in observed:
        if data.label_names[idx] not in mapping:
            raise InputError(f"label {data.label_names[idx]!r} missing from mapping")
    new_order: list[str] = []
    new_index: dict = {}
    old_to_new = {}
    for idx, name in enumerate(data.label_names):
        if name not in mapping:
            continue
        target = str(mapping[name])
        if target not in new_index:
            new_index[target] = len(new_order)
            new_order.append(target)
        old_to_new[idx] = new_index[target]
    labels = np.asarray([old_to_new[v] for v in data.labels], dtype=np.int64)
    return replace(data, labels=labels, label_names=new_order)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition; seeded and deterministic.

    Stratified mode allocates round(fraction * class size) test rows per
    class, preserving proportions within one row per class.
    """
    rng = np.random.default_rng(spec.seed)
    n = data.n_rows
    if spec.stratified:
        test_idx = []
        for c in np.unique(data.labels):
            rows = np.nonzero(data.labels == c)[0]
            perm = rng.permutation(rows.size)
            n_test = _round_half_up(spec.test_fraction * rows.size)
            test_idx.extend(rows[perm[:n_test]].tolist())
        test_mask = np.zeros(n, dtype=bool)
        test_mask[test_idx] = True
    else:
        perm = rng.permutation(n)
        n_test = _round_half_up(spec.test_fraction * n)
        test_mask = np.zeros(n, dtype=bool)
        test_mask[perm[:n_test]] = True
    if test_mask.all() or not test_mask.any():
        raise ConfigError("split produced an empty partition")
    train_rows = np.nonzero(~test_mask)[0]
    test_rows = np.nonzero(test_mask)[0]
    return data.take_rows(train_rows), data.take_rows(test_rows)


def smote(train: Dataset, k: int = 5, seed: int = 0) -> Dataset:
    """Upsample every minority class to the majority count.

    Each synthetic row is parent + u * (neighbor - parent) with u ~ U(0, 1)
    and the neighbor drawn from the parent's k nearest same-class rows; the
    synthetic row carries the parent's class. Requires a fully observed
    feature matrix (run after encoding and imputation).
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if train.missing.any():
        raise InputError("oversampling requires a fully observed feature matrix")
    rng = np.random.default_rng(seed)
    counts = np.bincount(train.labels)
    majority = int(counts.max())
    new_rows = []
    new_labels = []
    for c in range(counts.size):
        count = int(counts[c])
        if count == 0 or count == majority:
            continue
        if count < 2:
            raise InputError(f"class {c} has {count} sample(s); need at least 2")
        k_eff = k
        if k >= count:
            k_eff = count - 1
            warnings.warn(
                f"class {c}: k={k} >= class size {count}, lowering k to {k_eff}",
                stacklevel=2,
            )
        rows = np.nonzero(train.labels == c)[0]
        pts = train.values[rows]
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        for _ in range(majority - count):
            p = int(rng.integers(0, count))
            nb = int(nn[p, int(rng.integers(0, k_eff))])
            u = rng.random()
            new_rows.append(pts[p] + u * (pts[nb] - pts[p]))
            new_labels.append(c)
    if not new_rows:
        return train
    values = np.vstack([train.values, np.asarray(new_rows)])
    labels = np.concatenate([train.labels, np.asarray(new_labels, dtype=np.int64)])
    missing = np.zeros(values.shape, dtype=bool)
    return replace(train, values=values, missing=missing, labels=labels)


def select_features(data: Dataset, names: Sequence[str]) -> Dataset:
    """Project the dataset onto the named feature columns (given order)."""
    idx = [data.column_index(n) for n in names]
    cols = [data.columns[j] for j in idx]
    return replace(
        data,
        columns=cols,
        values=data.values[:, idx].copy(),
        missing=data.missing[:, idx].copy(),
        cat_codes={c.name: data.cat_codes[c.name] for c in cols if c.role == CATEGORICAL},
    )
