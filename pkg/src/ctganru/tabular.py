"""Typed tabular data, CSV/schema I/O, splitting and the row encoder.

A :class:`Dataset` stores every column in one float matrix; discrete columns
hold category indices (exactly representable as floats). Category order in
the :class:`DataSchema` fixes the one-hot positions.

Encoded rows are laid out as
``[alpha_1, beta_1, ..., alpha_Nc, beta_Nc, d_1, ..., d_Nd]``: continuous
columns first, each as its scaled offset followed by a one-hot mode
indicator, then one one-hot block per discrete column (label included).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, SchemaError
from .mode_norm import (
    DEFAULT_MAX_MODES,
    DEFAULT_WEIGHT_THRESHOLD,
    ModeModel,
    denormalize,
    fit_vgm,
    normalize_many,
)

CONTINUOUS = "continuous"
DISCRETE = "discrete"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == DISCRETE:
            if len(self.categories) < 2:
                raise SchemaError(f"discrete column {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"discrete column {self.name!r} has duplicate categories")
        elif self.categories:
            raise SchemaError(f"continuous column {self.name!r} cannot list categories")

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_discrete:
            d["categories"] = list(self.categories)
        return d


@dataclass(frozen=True)
class DataSchema:
    """Ordered columns plus the designated label column.

    ``label_kind`` is ``"binary"`` (label has exactly two categories, the
    second one being the positive class) or ``"ordered"`` (label categories
    listed from lowest to highest level).
    """

    columns: tuple
    label_column: str
    label_kind: str = "binary"

    def __post_init__(self):
        cols = tuple(c if isinstance(c, Column) else Column(**c) for c in self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.label_column not in names:
            raise SchemaError(f"label column {self.label_column!r} is not a schema column")
        label = self.column(self.label_column)
        if not label.is_discrete:
            raise SchemaError(f"label column {self.label_column!r} must be discrete")
        if self.label_kind == "binary":
            if label.n_categories != 2:
                raise SchemaError("a binary label needs exactly 2 categories")
        elif self.label_kind == "ordered":
            if label.n_categories < 3:
                raise SchemaError("an ordered label needs >= 3 levels")
        else:
            raise SchemaError(f"unknown label_kind {self.label_kind!r}")

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None

    @property
    def continuous(self) -> list:
        return [c for c in self.columns if not c.is_discrete]

    @property
    def discrete(self) -> list:
        return [c for c in self.columns if c.is_discrete]

    @property
    def label(self) -> Column:
        return self.column(self.label_column)

    @property
    def n_classes(self) -> int:
        return self.label.n_categories

    def to_dict(self) -> dict:
        return {
            "label": self.label_column,
            "label_kind": self.label_kind,
            "columns": [c.to_dict() for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DataSchema":
        try:
            cols = [
                Column(name=str(c["name"]), kind=str(c["kind"]), categories=tuple(c.get("categories", ())))
                for c in d["columns"]
            ]
            return cls(tuple(cols), str(d["label"]), str(d.get("label_kind", "binary")))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc


def load_schema(path) -> DataSchema:
    """Read a YAML schema file (see README for the grammar)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"schema file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping):
        raise SchemaError(f"schema file {path} must hold a mapping")
    return DataSchema.from_dict(doc)


def dump_schema(schema: DataSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


class Dataset:
    """Immutable table conforming to a :class:`DataSchema`."""

    __slots__ = ("schema", "values")

    def __init__(self, schema: DataSchema, values, *, validate: bool = True):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, len(schema.columns))
        if arr.ndim != 2 or arr.shape[1] != len(schema.columns):
            raise DataError(f"expected a (n, {len(schema.columns)}) matrix, got shape {arr.shape}")
        if validate:
            _validate_matrix(schema, arr)
        arr.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, key, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        return f"Dataset(n_rows={len(self)}, columns={self.schema.names})"

    @classmethod
    def from_columns(cls, schema: DataSchema, columns: Mapping) -> "Dataset":
        """Build from ``{name: array}``; discrete columns may be indices or category names."""
        n = None
        mat = []
        for col in schema.columns:
            if col.name not in columns:
                raise DataError("missing column", column=col.name)
            v = np.asarray(columns[col.name])
            if col.is_discrete and v.dtype.kind in "USO":
                lookup = {c: i for i, c in enumerate(col.categories)}
                try:
                    v = np.array([lookup[str(x)] for x in v], dtype=float)
                except KeyError as exc:
                    raise DataError(f"unknown category {exc.args[0]!r}", column=col.name) from None
            v = v.astype(float).reshape(-1)
            if n is None:
                n = len(v)
            elif len(v) != n:
                raise DataError("columns have different lengths", column=col.name)
            mat.append(v)
        return cls(schema, np.column_stack(mat) if mat else np.empty((0, 0)))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def codes(self, name: str) -> np.ndarray:
        """Integer category indices of a discrete column."""
        if not self.schema.column(name).is_discrete:
            raise SchemaError(f"column {name!r} is not discrete")
        return self.column(name).astype(np.int64)

    @property
    def labels(self) -> np.ndarray:
        return self.codes(self.schema.label_column)

    def category_counts(self, name: str) -> np.ndarray:
        col = self.schema.column(name)
        return np.bincount(self.codes(name), minlength=col.n_categories)

    def class_counts(self) -> dict:
        """Row count per label category, keyed by category name."""
        counts = self.category_counts(self.schema.label_column)
        return {c: int(k) for c, k in zip(self.schema.label.categories, counts)}

    def take(self, indices) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(indices, dtype=np.int64)], validate=False)

    def where_label(self, code: int) -> np.ndarray:
        return np.flatnonzero(self.labels == code)

    def concat(self, *others: "Dataset") -> "Dataset":
        for o in others:
            if o.schema != self.schema:
                raise SchemaError("cannot concatenate datasets with different schemas")
        return Dataset(self.schema, np.vstack([self.values] + [o.values for o in others]), validate=False)

    def with_column(self, name: str, values) -> "Dataset":
        arr = self.values.copy()
        arr[:, self.schema.index(name)] = values
        return Dataset(self.schema, arr)

    def records(self) -> list:
        """Rows as ``{column: value}`` dicts (discrete values as category names)."""
        out = []
        for row in self.values:
            rec = {}
            for col, v in zip(self.schema.columns, row):
                rec[col.name] = col.categories[int(v)] if col.is_discrete else float(v)
            out.append(rec)
        return out


def _validate_matrix(schema: DataSchema, arr: np.ndarray) -> None:
    for j, col in enumerate(schema.columns):
        v = arr[:, j]
        bad = ~np.isfinite(v)
        if bad.any():
            raise DataError("non-finite or missing value", row=int(np.argmax(bad)) + 2, column=col.name)
        if col.is_discrete:
            bad = (v != np.round(v)) | (v < 0) | (v >= col.n_categories)
            if bad.any():
                raise DataError("invalid category index", row=int(np.argmax(bad)) + 2, column=col.name)


def load_csv(path, schema: DataSchema) -> Dataset:
    """Parse a UTF-8 CSV with a header row into a validated :class:`Dataset`.

    Header names must match the schema (any order). Missing values are
    rejected, not imputed. Error messages carry 1-based row numbers with the
    header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"empty file {path}")
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError("missing column", row=1, column=missing[0])
        extra = [h for h in header if h not in schema.names]
        if extra:
            raise DataError("column not in schema", row=1, column=extra[0])
        if len(set(header)) != len(header):
            raise DataError("duplicate header column", row=1)
        pos = [header.index(n) for n in schema.names]
        lookups = [
            {c: i for i, c in enumerate(col.categories)} if col.is_discrete else None for col in schema.columns
        ]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(rec)}", row=lineno)
            out = []
            for col, p, lk in zip(schema.columns, pos, lookups):
                raw = rec[p].strip()
                if raw == "":
                    raise DataError("missing value", row=lineno, column=col.name)
                if lk is not None:
                    if raw not in lk:
                        raise DataError(f"unknown category {raw!r}", row=lineno, column=col.name)
                    out.append(lk[raw])
                else:
                    try:
                        x = float(raw)
                    except ValueError:
                        raise DataError(f"unparseable number {raw!r}", row=lineno, column=col.name) from None
                    if not math.isfinite(x):
                        raise DataError(f"non-finite value {raw!r}", row=lineno, column=col.name)
                    out.append(x)
            rows.append(out)
    if not rows:
        raise DataError(f"no data rows in {path}")
    return Dataset(schema, np.array(rows, dtype=float), validate=False)


def write_csv(data: Dataset, path) -> None:
    """Write with category names verbatim and continuous values at 9 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.schema.names)
        cols = data.schema.columns
        for row in data.values:
            w.writerow(
                [c.categories[int(v)] if c.is_discrete else format(float(v), ".9g") for c, v in zip(cols, row)]
            )


def split(data: Dataset, train_fraction: float, seed: int):
    """Random disjoint train/test partition with ``round(train_fraction * N)`` training rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(data)
    if n == 0:
        raise ConfigError("cannot split an empty dataset")
    n_train = int(math.floor(train_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    return data.take(np.sort(perm[:n_train])), data.take(np.sort(perm[n_train:]))


# --------------------------------------------------------------------------- encoding


@dataclass(frozen=True)
class Segment:
    """A contiguous slice of the encoded row.

    ``kind`` is ``"alpha"`` (one tanh unit), ``"mode"`` (one-hot over the
    column's mixture modes) or ``"discrete"`` (one-hot over categories).
    """

    kind: str
    column: str
    start: int
    size: int

    @property
    def stop(self) -> int:
        return self.start + self.size


def encoding_layout(schema: DataSchema, mode_models: Mapping[str, ModeModel]) -> list:
    segs = []
    pos = 0
    for col in schema.continuous:
        if col.name not in mode_models:
            raise ConfigError(f"no mode model for continuous column {col.name!r}")
        k = mode_models[col.name].n_modes
        segs.append(Segment("alpha", col.name, pos, 1))
        segs.append(Segment("mode", col.name, pos + 1, k))
        pos += 1 + k
    for col in schema.discrete:
        segs.append(Segment("discrete", col.name, pos, col.n_categories))
        pos += col.n_categories
    return segs


def encoded_length(schema: DataSchema, mode_models: Mapping[str, ModeModel]) -> int:
    return sum(1 + mode_models[c.name].n_modes for c in schema.continuous) + sum(
        c.n_categories for c in schema.discrete
    )


def encode_matrix(data: Dataset, mode_models: Mapping[str, ModeModel], rng: np.random.Generator) -> np.ndarray:
    schema = data.schema
    segs = encoding_layout(schema, mode_models)
    out = np.zeros((len(data), segs[-1].stop if segs else 0))
    rows = np.arange(len(data))
    for seg in segs:
        if seg.kind == "alpha":
            alpha, mode = normalize_many(data.column(seg.column), mode_models[seg.column], rng)
            out[:, seg.start] = alpha
            out[rows, seg.start + 1 + mode] = 1.0
        elif seg.kind == "discrete":
            out[rows, seg.start + data.codes(seg.column)] = 1.0
    return out


def decode_matrix(encoded, schema: DataSchema, mode_models: Mapping[str, ModeModel]) -> Dataset:
    enc = np.atleast_2d(np.asarray(encoded, dtype=float))
    segs = encoding_layout(schema, mode_models)
    width = segs[-1].stop if segs else 0
    if enc.shape[1] != width:
        raise ConfigError(f"encoded width {enc.shape[1]} does not match schema layout width {width}")
    cols = {}
    for i, seg in enumerate(segs):
        if seg.kind == "alpha":
            mode_seg = segs[i + 1]
            mode = np.argmax(enc[:, mode_seg.start : mode_seg.stop], axis=1)
            alpha = np.clip(enc[:, seg.start], -1.0, 1.0)
            cols[seg.column] = denormalize(alpha, mode, mode_models[seg.column])
        elif seg.kind == "discrete":
            cols[seg.column] = np.argmax(enc[:, seg.start : seg.stop], axis=1)
    return Dataset.from_columns(schema, cols)


def _row_to_dataset(row: Mapping, schema: DataSchema) -> Dataset:
    return Dataset.from_columns(schema, {name: [row[name]] for name in schema.names})


def encode_row(row: Mapping, mode_models: Mapping[str, ModeModel], schema: DataSchema, rng) -> np.ndarray:
    """Encode one ``{column: value}`` record; discrete values may be indices or names."""
    return encode_matrix(_row_to_dataset(row, schema), mode_models, rng)[0]


def decode_row(encoded, mode_models: Mapping[str, ModeModel], schema: DataSchema) -> dict:
    """Inverse of :func:`encode_row`; discrete values come back as category indices."""
    enc = np.asarray(encoded, dtype=float)
    if enc.ndim != 1:
        raise ConfigError("decode_row expects a single flat vector")
    ds = decode_matrix(enc[None, :], schema, mode_models)
    return {
        c.name: int(v) if c.is_discrete else float(v) for c, v in zip(schema.columns, ds.values[0])
    }


class TabularEncoder(TransformerMixin, BaseEstimator):
    """Fit per-column mixtures and map datasets to/from encoded matrices.

    Parameters
    ----------
    max_modes : int
        Upper bound on mixture components per continuous column.
    weight_threshold : float
        Components lighter than this are pruned after fitting.
    random_state : int
        Seeds mixture subsampling and the posterior mode draws in ``transform``.
    """

    def __init__(self, max_modes=DEFAULT_MAX_MODES, weight_threshold=DEFAULT_WEIGHT_THRESHOLD, random_state=0):
        self.max_modes = max_modes
        self.weight_threshold = weight_threshold
        self.random_state = random_state

    def fit(self, X: Dataset, y=None):
        if not isinstance(X, Dataset):
            raise TypeError("TabularEncoder.fit expects a Dataset")
        self.schema_ = X.schema
        self.mode_models_ = {
            col.name: fit_vgm(
                X.column(col.name),
                self.max_modes,
                self.weight_threshold,
                seed=self.random_state + j,
                column=col.name,
            )
            for j, col in enumerate(X.schema.continuous)
        }
        self.layout_ = encoding_layout(self.schema_, self.mode_models_)
        self.output_dim_ = encoded_length(self.schema_, self.mode_models_)
        return self

    def transform(self, X: Dataset, rng=None) -> np.ndarray:
        check_is_fitted(self, "mode_models_")
        if X.schema != self.schema_:
            raise ConfigError("dataset schema differs from the schema seen in fit")
        if rng is None:
            rng = np.random.default_rng(self.random_state)
        return encode_matrix(X, self.mode_models_, rng)

    def inverse_transform(self, X) -> Dataset:
        check_is_fitted(self, "mode_models_")
        return decode_matrix(X, self.schema_, self.mode_models_)


def make_schema(
    continuous: Sequence[str],
    discrete: Mapping[str, Iterable],
    label: str,
    label_kind: str = "binary",
) -> DataSchema:
    """Convenience constructor: continuous columns first, then discrete ones."""
    cols = [Column(n, CONTINUOUS) for n in continuous]
    cols += [Column(n, DISCRETE, tuple(cats)) for n, cats in discrete.items()]
    return DataSchema(tuple(cols), label, label_kind)
