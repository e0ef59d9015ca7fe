"""Tabular dataset container, CSV loading with type inference, and splits."""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class DatasetError(ValueError):
    """Base class for data loading and validation failures."""


class MissingFile(DatasetError, FileNotFoundError):
    pass


class DuplicateColumn(DatasetError):
    pass


class RaggedRow(DatasetError):
    pass


class MissingTarget(DatasetError):
    pass


class MissingValue(DatasetError):
    pass


class NonBinaryTarget(DatasetError):
    pass


class TypeOverrideError(DatasetError):
    pass


class ColumnKind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"


_TRUE_TOKENS = {"1", "true", "y", "yes"}
_FALSE_TOKENS = {"0", "false", "n", "no"}
_BOOL_INFER_TOKENS = {"0", "1", "true", "false", "y", "n"}
_MISSING_TOKENS = {"", "nan", "NaN"}


def parse_bool_token(token) -> bool | None:
    """Map a literal (string, number or bool) onto a boolean, or None if unmappable."""
    if isinstance(token, (bool, np.bool_)):
        return bool(token)
    if isinstance(token, (int, float)) and token in (0, 1):
        return bool(token)
    if isinstance(token, str):
        low = token.strip().lower()
        if low in _TRUE_TOKENS:
            return True
        if low in _FALSE_TOKENS:
            return False
    return None


@dataclass(frozen=True, eq=False)
class Column:
    name: str
    kind: ColumnKind
    values: np.ndarray
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise DatasetError("column names must be non-empty")
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, Column):
            return NotImplemented
        return (
            self.name == other.name
            and self.kind == other.kind
            and self.categories == other.categories
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def take(self, indices: np.ndarray) -> "Column":
        values = self.values[indices]
        if self.kind is ColumnKind.CATEGORICAL:
            return make_categorical(self.name, values)
        return Column(self.name, self.kind, values.copy())

    def observed_values(self) -> list:
        """Distinct values in first-appearance order."""
        if self.kind is ColumnKind.CATEGORICAL:
            return list(self.categories)
        _, first = np.unique(self.values, return_index=True)
        return [self.values[i].item() for i in sorted(first)]


def make_categorical(name: str, values: Iterable) -> Column:
    arr = np.array([str(v) for v in values], dtype=object)
    cats = tuple(dict.fromkeys(arr.tolist()))
    return Column(name, ColumnKind.CATEGORICAL, arr, cats)


def make_numeric(name: str, values: Iterable) -> Column:
    return Column(name, ColumnKind.NUMERIC, np.asarray(values, dtype=np.float64).copy())


def make_boolean(name: str, values: Iterable) -> Column:
    return Column(name, ColumnKind.BOOLEAN, np.asarray(values, dtype=bool).copy())


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column-oriented table. Columns keep their declared order."""

    name: str
    columns: tuple[Column, ...]
    target_column: str | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        index = {}
        for i, col in enumerate(self.columns):
            if col.name in index:
                raise DuplicateColumn(f"duplicate column name {col.name!r}")
            index[col.name] = i
        object.__setattr__(self, "_index", index)
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise RaggedRow(f"columns have differing lengths: {sorted(lengths)}")
        if self.target_column is not None:
            if self.target_column not in index:
                raise MissingTarget(f"target column {self.target_column!r} not in dataset")
            _check_binary(self.column(self.target_column))

    @classmethod
    def from_dict(
        cls,
        data: Mapping[str, Sequence],
        kinds: Mapping[str, ColumnKind | str] | None = None,
        target: str | None = None,
        name: str = "dataset",
    ) -> "Dataset":
        """Build a dataset from python sequences; kinds are inferred where not given."""
        kinds = dict(kinds or {})
        cols = []
        for col_name, values in data.items():
            kind = kinds.get(col_name)
            if kind is None:
                kind = _infer_from_python(values)
            cols.append(_build_column(col_name, ColumnKind(kind), list(values)))
        return cls(name, tuple(cols), target)

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def schema(self) -> dict[str, ColumnKind]:
        return {c.name: c.kind for c in self.columns}

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def column(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name).values

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.target_column == other.target_column
            and len(self.columns) == len(other.columns)
            and all(a == b for a, b in zip(self.columns, other.columns))
        )

    __hash__ = None

    def feature_names(self, exclude: Iterable[str] = ()) -> list[str]:
        skip = set(exclude)
        if self.target_column:
            skip.add(self.target_column)
        return [n for n in self.column_names if n not in skip]

    def labels(self) -> np.ndarray:
        if self.target_column is None:
            raise MissingTarget("dataset has no target column")
        return self[self.target_column].astype(np.int8)

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.name, tuple(c.take(idx) for c in self.columns), self.target_column)

    def with_column(self, column: Column) -> "Dataset":
        if column.name in self:
            raise DuplicateColumn(f"duplicate column name {column.name!r}")
        if self.columns and len(column) != self.n_rows:
            raise RaggedRow(f"column {column.name!r} has {len(column)} rows, expected {self.n_rows}")
        return Dataset(self.name, self.columns + (column,), self.target_column)

    def drop(self, names: Iterable[str]) -> "Dataset":
        names = set(names)
        target = None if self.target_column in names else self.target_column
        return Dataset(self.name, tuple(c for c in self.columns if c.name not in names), target)

    def with_target(self, target: str | None) -> "Dataset":
        return Dataset(self.name, self.columns, target)


def _check_binary(col: Column) -> None:
    if col.kind is ColumnKind.BOOLEAN:
        return
    if col.kind is ColumnKind.NUMERIC and np.isin(col.values, (0.0, 1.0)).all():
        return
    raise NonBinaryTarget(
        f"target column {col.name!r} must be boolean or 0/1 valued; only binary targets are supported"
    )


def _infer_from_python(values: Sequence) -> ColumnKind:
    if all(isinstance(v, (bool, np.bool_)) for v in values):
        return ColumnKind.BOOLEAN
    if all(isinstance(v, (int, float, np.integer, np.floating)) for v in values):
        return ColumnKind.NUMERIC
    return infer_kind([str(v) for v in values])


def _is_number(token: str) -> bool:
    try:
        value = float(token)
    except ValueError:
        return False
    return np.isfinite(value)


def infer_kind(tokens: Sequence[str]) -> ColumnKind:
    """Numeric beats boolean beats categorical."""
    if all(_is_number(t) for t in tokens):
        return ColumnKind.NUMERIC
    if all(t.strip().lower() in _BOOL_INFER_TOKENS for t in tokens):
        return ColumnKind.BOOLEAN
    return ColumnKind.CATEGORICAL


def _build_column(name: str, kind: ColumnKind, tokens: list) -> Column:
    if kind is ColumnKind.NUMERIC:
        try:
            return make_numeric(name, [float(t) for t in tokens])
        except (TypeError, ValueError) as exc:
            raise TypeOverrideError(f"column {name!r} cannot be read as numeric: {exc}") from None
    if kind is ColumnKind.BOOLEAN:
        out = []
        for t in tokens:
            b = parse_bool_token(t)
            if b is None:
                raise TypeOverrideError(f"column {name!r} value {t!r} is not boolean")
            out.append(b)
        return make_boolean(name, out)
    return make_categorical(name, [_format_token(t) for t in tokens])


def _format_token(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def read_schema_file(path: str | os.PathLike) -> dict[str, ColumnKind]:
    """Parse a ``column=type`` sidecar file. Blank lines and ``#`` comments are skipped."""
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"{path}:{lineno}: expected column=type, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                overrides[key] = ColumnKind(value.lower())
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: unknown column type {value!r}") from None
    return overrides


def load_csv(
    path: str | os.PathLike,
    target: str | None = None,
    type_overrides: Mapping[str, ColumnKind | str] | None = None,
    name: str | None = None,
) -> Dataset:
    """Load a headed, comma-delimited UTF-8 CSV.

    A sidecar ``<path>.schema`` file, if present, supplies type overrides; explicit
    ``type_overrides`` win over it.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    overrides: dict[str, ColumnKind] = {}
    sidecar = path + ".schema"
    if os.path.isfile(sidecar):
        overrides.update(read_schema_file(sidecar))
    for key, kind in (type_overrides or {}).items():
        overrides[key] = ColumnKind(kind)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header row required") from None
        seen = set()
        for h in header:
            if not h:
                raise DatasetError(f"{path}: empty column name in header")
            if h in seen:
                raise DuplicateColumn(f"{path}: duplicate column name {h!r}")
            seen.add(h)
        cells: list[list[str]] = [[] for _ in header]
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRow(f"{path}: line {row_no} has {len(row)} fields, expected {len(header)}")
            for j, token in enumerate(row):
                if token.strip() in _MISSING_TOKENS:
                    raise MissingValue(f"{path}: missing value at line {row_no}, column {header[j]!r}")
                cells[j].append(token.strip())

    if not cells or not cells[0]:
        raise DatasetError(f"{path}: no data rows")
    unknown = set(overrides) - set(header)
    if unknown:
        raise TypeOverrideError(f"type overrides for unknown columns: {sorted(unknown)}")
    if target is not None and target not in header:
        raise MissingTarget(f"{path}: target column {target!r} not in header")

    columns = []
    for col_name, tokens in zip(header, cells):
        kind = overrides.get(col_name) or infer_kind(tokens)
        columns.append(_build_column(col_name, kind, tokens))
    ds_name = name or os.path.splitext(os.path.basename(path))[0]
    return Dataset(ds_name, tuple(columns), target)


def format_value(value, kind: ColumnKind) -> str:
    if kind is ColumnKind.NUMERIC:
        value = float(value)
        return str(int(value)) if value.is_integer() and abs(value) < 2**53 else repr(value)
    if kind is ColumnKind.BOOLEAN:
        return "true" if value else "false"
    return str(value)


def write_csv(dataset: Dataset, path: str | os.PathLike, write_schema: bool = True) -> None:
    """Write a dataset so that :func:`load_csv` reproduces it exactly.

    The schema sidecar pins column kinds that inference alone would not recover
    (e.g. a categorical column whose values look numeric).
    """
    path = os.fspath(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.column_names)
        formatted = [[format_value(v, c.kind) for v in c.values] for c in dataset.columns]
        writer.writerows(zip(*formatted))
    if write_schema:
        with open(path + ".schema", "w", encoding="utf-8") as fh:
            for col in dataset.columns:
                fh.write(f"{col.name}={col.kind.value}\n")


@dataclass(frozen=True)
class ColumnSummary:
    name: str
    kind: ColumnKind
    values: tuple = ()
    minimum: float | None = None
    maximum: float | None = None
    mean: float | None = None
    median: float | None = None

    def listing(self):
        """The per-column value listing embedded in prompts."""
        if self.kind is ColumnKind.NUMERIC:
            text = (
                f"numeric, min {_num(self.minimum)}, max {_num(self.maximum)}, "
                f"mean {_num(self.mean)}, median {_num(self.median)}"
            )
            if self.values:
                text += f", values {list(self.values)}"
            return text
        return list(self.values)


def _num(x: float) -> str:
    return format(x, ".4g")


@dataclass(frozen=True)
class DataContext:
    description_text: str
    column_summaries: tuple[ColumnSummary, ...]

    @property
    def column_names(self) -> list[str]:
        return [s.name for s in self.column_summaries]

    def inventory_text(self) -> str:
        """Column count, names and values in the layout the prompts use."""
        items = [(s.name, s.listing()) for s in self.column_summaries]
        return (
            f"The dataset contains {len(items)} columns. "
            f"The columns are {', '.join(self.column_names)}. "
            f"The values are dict_items({items!r})"
        )

    def render(self) -> str:
        if self.description_text.strip():
            return f"{self.description_text.strip()}\n\n{self.inventory_text()}"
        return self.inventory_text()


LOW_CARDINALITY = 10


def describe(dataset: Dataset, task_prose: str = "") -> DataContext:
    if dataset.n_rows == 0:
        raise DatasetError("cannot describe an empty dataset")
    summaries = []
    for col in dataset.columns:
        if col.kind is ColumnKind.NUMERIC:
            v = col.values
            uniq = np.unique(v)
            listed = tuple(_py_number(u) for u in uniq) if len(uniq) <= LOW_CARDINALITY else ()
            summaries.append(
                ColumnSummary(
                    col.name, col.kind, listed,
                    float(v.min()), float(v.max()), float(v.mean()), float(np.median(v)),
                )
            )
        elif col.kind is ColumnKind.BOOLEAN:
            summaries.append(ColumnSummary(col.name, col.kind, tuple(col.observed_values())))
        else:
            summaries.append(ColumnSummary(col.name, col.kind, col.categories))
    return DataContext(task_prose, tuple(summaries))


def _py_number(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def split_indices(n_rows: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if n_rows < 2:
        raise DatasetError("need at least 2 rows to split")
    n_test = int(round(n_rows * test_fraction))
    n_test = min(max(n_test, 1), n_rows - 1)
    perm = np.random.default_rng(seed).permutation(n_rows)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic disjoint (train, test) partition of the rows."""
    train_idx, test_idx = split_indices(dataset.n_rows, test_fraction, seed)
    return dataset.take(train_idx), dataset.take(test_idx)
