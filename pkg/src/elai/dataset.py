"""Labeled flow-record datasets: CSV ingestion, z-score normalization,
splitting, category hold-out and a seeded synthetic generator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadFractions,
    ClassAbsent,
    ConfigError,
    DimensionMismatch,
    EmptyFile,
    IoFailure,
    MissingColumn,
    NoCategories,
    NonNumericCell,
    TooFewRows,
    UnknownCategory,
    UnknownLabel,
)

DEFAULT_POSITIVE_LABELS = ("1", "attack", "malicious")
DEFAULT_NEGATIVE_LABELS = ("0", "normal", "benign")
NORMAL_CATEGORY = "normal"


@dataclass(frozen=True)
class FeatureSchema:
    feature_names: tuple[str, ...]
    label_column: str = "label"
    category_column: Optional[str] = None
    delimiter: str = ","

    def __post_init__(self):
        names = tuple(self.feature_names)
        object.__setattr__(self, "feature_names", names)
        if not names:
            raise ConfigError("feature_names must be non-empty")
        if len(set(names)) != len(names):
            raise ConfigError("feature_names must be pairwise distinct")
        if self.label_column in names:
            raise ConfigError(f"label column {self.label_column!r} is also a feature")
        if self.category_column is not None and self.category_column in names:
            raise ConfigError(f"category column {self.category_column!r} is also a feature")
        if len(self.delimiter) != 1:
            raise ConfigError("delimiter must be a single character")

    @property
    def d(self) -> int:
        return len(self.feature_names)


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    categories: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionMismatch(f"X must be a non-empty matrix, got shape {X.shape}")
        if X.shape[1] != self.schema.d:
            raise DimensionMismatch(
                f"X has {X.shape[1]} columns but schema names {self.schema.d} features"
            )
        if y.shape != (X.shape[0],):
            raise DimensionMismatch("y must be a vector with one entry per row")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains NaN or Inf")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y.astype(np.int64)))
        if self.categories is not None:
            cats = np.asarray(self.categories, dtype=object)
            if cats.shape != (X.shape[0],):
                raise DimensionMismatch("categories must have one entry per row")
            object.__setattr__(self, "categories", _frozen(cats))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        """Row subset in the order given by ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return _subset(self, idx)

    def with_X(self, X: np.ndarray, feature_names: Sequence[str]) -> "Dataset":
        schema = FeatureSchema(
            tuple(feature_names),
            self.schema.label_column,
            self.schema.category_column,
            self.schema.delimiter,
        )
        return Dataset(X, self.y, schema, self.categories)

    def summary(self) -> dict:
        out = {"n": int(self.n), "d": int(self.d), "n_attack": int(self.y.sum())}
        if self.categories is not None:
            values, counts = np.unique(self.categories.astype(str), return_counts=True)
            out["categories"] = {str(v): int(c) for v, c in zip(values, counts)}
        return out


def _subset(ds: Dataset, idx: np.ndarray) -> Dataset:
    # empty subsets are legal outputs of split(); bypass the n >= 1 check
    obj = object.__new__(Dataset)
    object.__setattr__(obj, "X", _frozen(ds.X[idx].reshape(len(idx), ds.d)))
    object.__setattr__(obj, "y", _frozen(ds.y[idx]))
    object.__setattr__(obj, "schema", ds.schema)
    cats = None if ds.categories is None else _frozen(ds.categories[idx])
    object.__setattr__(obj, "categories", cats)
    return obj


# --- CSV ---------------------------------------------------------------------

def read_header(path, delimiter: str = ",") -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh, delimiter=delimiter), None)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not header:
        raise EmptyFile(f"{path} is empty")
    return [h.strip() for h in header]


def infer_schema(
    path,
    label_column: str = "label",
    category_column: Optional[str] = "category",
    delimiter: str = ",",
) -> FeatureSchema:
    """Schema whose features are every header column except label/category."""
    header = read_header(path, delimiter)
    if label_column not in header:
        raise MissingColumn(label_column)
    cat = category_column if category_column in header else None
    names = [h for h in header if h not in (label_column, cat)]
    return FeatureSchema(tuple(names), label_column, cat, delimiter)


def _parse_label(cell: str, row: int, pos: set, neg: set) -> int:
    key = cell.strip().lower()
    if key in pos:
        return 1
    if key in neg:
        return 0
    raise UnknownLabel(row, cell)


def load_csv(
    path,
    schema: FeatureSchema,
    positive_labels: Sequence[str] = DEFAULT_POSITIVE_LABELS,
    negative_labels: Sequence[str] = DEFAULT_NEGATIVE_LABELS,
) -> Dataset:
    """Read a labeled flow CSV.

    Columns not named by ``schema`` are ignored.  Row numbers in errors are
    1-based data rows (the header is row 0).
    """
    pos = {s.lower() for s in positive_labels}
    neg = {s.lower() for s in negative_labels} - pos
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text), delimiter=schema.delimiter)
    header = next(reader, None)
    if not header:
        raise EmptyFile(f"{path} is empty")
    header = [h.strip() for h in header]
    col = {name: i for i, name in enumerate(header)}
    for name in (*schema.feature_names, schema.label_column):
        if name not in col:
            raise MissingColumn(name)
    if schema.category_column is not None and schema.category_column not in col:
        raise MissingColumn(schema.category_column)

    feat_idx = [col[name] for name in schema.feature_names]
    label_idx = col[schema.label_column]
    cat_idx = col.get(schema.category_column) if schema.category_column else None

    rows, labels, cats = [], [], []
    for r, cells in enumerate(reader, start=1):
        if not cells:
            continue
        if len(cells) < len(header):
            raise MissingColumn(header[len(cells)])
        values = []
        for j, name in zip(feat_idx, schema.feature_names):
            try:
                v = float(cells[j])
            except ValueError:
                raise NonNumericCell(r, name, cells[j]) from None
            if not math.isfinite(v):
                raise NonNumericCell(r, name, cells[j])
            values.append(v)
        rows.append(values)
        labels.append(_parse_label(cells[label_idx], r, pos, neg))
        if cat_idx is not None:
            cats.append(cells[cat_idx].strip())
    if not rows:
        raise EmptyFile(f"{path} has a header but no data rows")
    return Dataset(
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.int64),
        schema,
        np.array(cats, dtype=object) if cat_idx is not None else None,
    )


def to_csv(ds: Dataset, path) -> None:
    """Write ``ds`` so that :func:`load_csv` reproduces it exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=ds.schema.delimiter, lineterminator="\n")
    header = list(ds.schema.feature_names) + [ds.schema.label_column]
    has_cat = ds.categories is not None
    if has_cat:
        header.append(ds.schema.category_column or "category")
    writer.writerow(header)
    for i in range(ds.n):
        row = [repr(float(v)) for v in ds.X[i]] + [str(int(ds.y[i]))]
        if has_cat:
            row.append(str(ds.categories[i]))
        writer.writerow(row)
    try:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --- normalization -----------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _frozen(np.asarray(self.std, dtype=np.float64)))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DimensionMismatch("mean and std must be vectors of equal length")
        if np.any(self.std < 0):
            raise ValueError("std entries must be >= 0")

    @property
    def constant(self) -> np.ndarray:
        return self.std == 0

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_normalize(ds: Dataset) -> NormStats:
    if ds.n < 2:
        raise TooFewRows(f"normalization needs at least 2 rows, got {ds.n}")
    return NormStats(ds.X.mean(axis=0), ds.X.std(axis=0, ddof=0))


def normalize_array(X: np.ndarray, stats: NormStats) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatch(
            f"stats cover {stats.mean.shape[0]} features, data has {X.shape[-1]}"
        )
    scale = np.where(stats.std > 0, stats.std, 1.0)
    out = (X - stats.mean) / scale
    out[..., stats.std == 0] = 0.0
    return out


def apply_normalize(ds: Dataset, stats: NormStats) -> Dataset:
    return Dataset(normalize_array(ds.X, stats), ds.y, ds.schema, ds.categories)


# --- splitting ---------------------------------------------------------------

def _count(frac: float, n: int) -> int:
    return int(math.floor(frac * n + 1e-9))


def split(
    ds: Dataset,
    train_frac: float,
    val_frac: float = 0.0,
    seed: int = 0,
    stratified: bool = False,
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded (train, val, test) partition of the rows.

    Part sizes are ``floor(frac * n)`` for train and val; test takes the
    rest.  In stratified mode the same rule is applied within each class.
    """
    if not (train_frac > 0 and val_frac >= 0 and train_frac + val_frac < 1):
        raise BadFractions(f"bad fractions train={train_frac}, val={val_frac}")
    rng = np.random.default_rng(seed)
    if stratified:
        groups = [np.flatnonzero(ds.y == c) for c in (0, 1)]
        if any(len(g) == 0 for g in groups):
            raise ClassAbsent("stratified split needs both classes present")
    else:
        groups = [np.arange(ds.n)]
    parts: list[list[np.ndarray]] = [[], [], []]
    for g in groups:
        g = g[rng.permutation(len(g))]
        a = _count(train_frac, len(g))
        b = a + _count(val_frac, len(g))
        for p, chunk in zip(parts, (g[:a], g[a:b], g[b:])):
            p.append(chunk)
    return tuple(ds.take(np.sort(np.concatenate(p))) for p in parts)


# --- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n_normal: int = 100
    n_attack: int = 100
    d: int = 6
    separation: float = 6.0
    noise_std: float = 1.0
    n_categories: int = 3

    def __post_init__(self):
        for name in ("n_normal", "n_attack", "d", "n_categories"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.separation >= 0:
            raise ConfigError("separation must be >= 0")
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be > 0")


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> Dataset:
    """Gaussian normal traffic at the origin, attacks shifted by
    ``separation`` along a seeded random unit direction."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(spec.d)
    direction /= np.linalg.norm(direction)
    X0 = spec.noise_std * rng.standard_normal((spec.n_normal, spec.d))
    X1 = spec.separation * direction + spec.noise_std * rng.standard_normal(
        (spec.n_attack, spec.d)
    )
    cats = [NORMAL_CATEGORY] * spec.n_normal + [
        f"cat{i % spec.n_categories}" for i in range(spec.n_attack)
    ]
    schema = FeatureSchema(
        tuple(f"f{j}" for j in range(spec.d)), "label", "category", ","
    )
    y = np.r_[np.zeros(spec.n_normal, dtype=np.int64), np.ones(spec.n_attack, dtype=np.int64)]
    return Dataset(np.vstack([X0, X1]), y, schema, np.array(cats, dtype=object))


def holdout_category(ds: Dataset, category: str) -> tuple[Dataset, Dataset]:
    """Split off every attack row of ``category`` (zero-day protocol)."""
    if ds.categories is None:
        raise NoCategories("dataset has no category column")
    cats = ds.categories.astype(str)
    held = (cats == category) & (ds.y == 1)
    if not held.any():
        raise UnknownCategory(category)
    return ds.take(np.flatnonzero(~held)), ds.take(np.flatnonzero(held))
