"""Model under test: externally supplied predictions, a built-in logistic
regression for hermetic experiments, and synthetic corruption wrappers."""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import ColumnKind, Dataset, DatasetError, parse_bool_token
from .predicate import Slice

SOURCES = ("external_column", "builtin_logistic", "corrupted")


@dataclass(frozen=True, eq=False)
class Predictions:
    values: np.ndarray
    source: str = "external_column"

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1 or not np.isin(values, (0, 1)).all():
            raise ValueError("predictions must be a 1-d vector of 0/1 values")
        values = values.astype(np.int8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.source not in SOURCES:
            raise ValueError(f"unknown predictions source {self.source!r}")

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, Predictions):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def check_aligned(self, dataset: Dataset) -> None:
        if len(self) != dataset.n_rows:
            raise DatasetError(f"{len(self)} predictions for {dataset.n_rows} rows")


def predictions_from_column(dataset: Dataset, name: str) -> Predictions:
    col = dataset.column(name)
    if col.kind is ColumnKind.BOOLEAN:
        return Predictions(col.values.astype(np.int8))
    if col.kind is ColumnKind.NUMERIC and np.isin(col.values, (0.0, 1.0)).all():
        return Predictions(col.values.astype(np.int8))
    raise DatasetError(f"prediction column {name!r} must hold 0/1 values")


def load_predictions(path: str | os.PathLike, n_rows: int | None = None) -> Predictions:
    """Read a single-column CSV with header ``prediction``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["prediction"]:
        raise DatasetError(f"{path}: expected a single 'prediction' header column")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        b = parse_bool_token(row[0]) if len(row) == 1 else None
        if b is None:
            raise DatasetError(f"{path}: line {lineno}: expected 0/1, got {row!r}")
        values.append(int(b))
    preds = Predictions(np.array(values, dtype=np.int8))
    if n_rows is not None and len(preds) != n_rows:
        raise DatasetError(f"{path}: {len(preds)} predictions for {n_rows} rows")
    return preds


def write_predictions(preds: Predictions, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("prediction\n")
        fh.writelines(f"{int(v)}\n" for v in preds.values)


# -- logistic regression -----------------------------------------------------

@dataclass(frozen=True)
class EncodedFeature:
    column: str
    kind: ColumnKind
    category: str | None = None

    @property
    def label(self) -> str:
        return self.column if self.category is None else f"{self.column}={self.category}"


@dataclass(frozen=True, eq=False)
class LogisticModel:
    features: tuple[EncodedFeature, ...]
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    loss_history: tuple[float, ...] = ()


def _raw_encode(data: Dataset, features, warn_unseen: bool = False) -> np.ndarray:
    out = np.empty((data.n_rows, len(features)), dtype=np.float64)
    seen_cats: dict[str, set] = {}
    for f in features:
        if f.category is not None:
            seen_cats.setdefault(f.column, set()).add(f.category)
    for j, f in enumerate(features):
        values = data[f.column]
        if f.category is not None:
            out[:, j] = values == f.category
        else:
            out[:, j] = values.astype(np.float64)
    if warn_unseen:
        for column, cats in seen_cats.items():
            unseen = set(data.column(column).categories) - cats
            if unseen:
                warnings.warn(
                    f"column {column!r} has values unseen during training {sorted(unseen)}; "
                    "encoded as all-zero",
                    stacklevel=3,
                )
    return out


def _candidate_features(train: Dataset, columns: list[str]) -> list[EncodedFeature]:
    feats = []
    for name in columns:
        col = train.column(name)
        if col.kind is ColumnKind.CATEGORICAL:
            feats.extend(EncodedFeature(name, col.kind, c) for c in col.categories)
        else:
            feats.append(EncodedFeature(name, col.kind))
    return feats


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_loss(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_logistic(
    train: Dataset,
    seed: int = 0,
    epochs: int = 300,
    learning_rate: float = 0.5,
    exclude: tuple[str, ...] = (),
) -> LogisticModel:
    """Full-batch gradient descent on standardized features.

    Categoricals are one-hot encoded; zero-variance encoded features are dropped
    with a warning.
    """
    y = train.labels().astype(np.float64)
    counts = np.bincount(y.astype(int), minlength=2)
    if counts.min() < 2:
        raise ValueError(f"need at least 2 rows per class to fit, got class counts {counts.tolist()}")
    columns = train.feature_names(exclude=exclude)
    feats = _candidate_features(train, columns)
    X = _raw_encode(train, feats)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    keep = stds > 1e-12
    if not keep.all():
        dropped = [f.label for f, k in zip(feats, keep) if not k]
        warnings.warn(f"dropping zero-variance features: {dropped}", stacklevel=2)
    feats = [f for f, k in zip(feats, keep) if k]
    X = (X[:, keep] - means[keep]) / stds[keep]
    means, stds = means[keep], stds[keep]

    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=X.shape[1])
    b = 0.0
    n = len(y)
    history = []
    for _ in range(epochs):
        z = X @ w + b
        history.append(_log_loss(z, y))
        resid = _sigmoid(z) - y
        w = w - learning_rate * (X.T @ resid) / n
        b = b - learning_rate * resid.mean()
    history.append(_log_loss(X @ w + b, y))
    return LogisticModel(tuple(feats), w, float(b), means, stds, tuple(history))


def decision_scores(model: LogisticModel, data: Dataset) -> np.ndarray:
    for f in model.features:
        if f.column not in data:
            raise DatasetError(f"column {f.column!r} used in training is missing")
    X = _raw_encode(data, model.features, warn_unseen=True)
    X = (X - model.feature_means) / model.feature_stds
    return X @ model.weights + model.bias


def predict(model: LogisticModel, data: Dataset) -> Predictions:
    """Class 1 whenever sigmoid(score) >= 0.5, i.e. ties go to class 1."""
    return Predictions((decision_scores(model, data) >= 0.0).astype(np.int8), "builtin_logistic")


# -- corruption --------------------------------------------------------------

def corrupt_on_slice(
    base: Predictions, slice: Slice, p: float, bernoulli_q: float = 0.5, seed: int = 0
) -> Predictions:
    """Each slice row is replaced with probability ``p`` by a Bernoulli(``bernoulli_q``) draw."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if not 0.0 <= bernoulli_q <= 1.0:
        raise ValueError(f"bernoulli_q must lie in [0, 1], got {bernoulli_q}")
    rng = np.random.default_rng(seed)
    rows = slice.row_indices
    replace = rng.random(len(rows)) < p
    draws = (rng.random(len(rows)) < bernoulli_q).astype(np.int8)
    values = base.values.copy()
    values[rows[replace]] = draws[replace]
    return Predictions(values, "corrupted")


def corrupt_proportion(base: Predictions, slice: Slice, tau: float, seed: int = 0) -> Predictions:
    """Give ``floor(tau * |slice|)`` uniformly chosen slice rows fair-coin predictions."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    rng = np.random.default_rng(seed)
    # epsilon guards products like 0.29 * 100 = 28.999...
    k = math.floor(tau * len(slice) + 1e-9)
    chosen = rng.choice(slice.row_indices, size=k, replace=False)
    values = base.values.copy()
    values[chosen] = rng.integers(0, 2, size=k, dtype=np.int8)
    return Predictions(values, "corrupted")
