"""Descriptive slice metrics used in audit reports.

Formulas follow the report's metric definitions literally. In particular the
"odds ratio" is ``p1(1-p1) / (p0(1-p0))`` with ``p0`` the rate in the rest of the
dataset, while lifts divide by the rate in the whole dataset. The conventional odds
ratio is available as an opt-in extra.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset
from .model import Predictions
from .predicate import Slice, count_criteria

METRIC_NAMES = (
    "group_size",
    "support",
    "p_value_bootstrap",
    "num_criteria",
    "outcome_diff",
    "accuracy_diff",
    "odds_ratio_outcome",
    "odds_ratio_acc",
    "lift_outcome",
    "lift_acc",
    "weighted_relative_y",
    "weighted_relative_acc",
)


@dataclass(frozen=True)
class SliceMetrics:
    group_size: int
    support: float
    num_criteria: int
    outcome_diff: float
    accuracy_diff: float
    odds_ratio_outcome: float | None
    odds_ratio_acc: float | None
    lift_outcome: float | None
    lift_acc: float | None
    weighted_relative_y: float
    weighted_relative_acc: float
    p_value_bootstrap: float | None = None
    conventional_or_outcome: float | None = None
    conventional_or_acc: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SliceMetrics":
        return cls(**{k: data.get(k) for k in cls.__dataclass_fields__})


def report_odds_ratio(p1: float, p0: float) -> float | None:
    denom = p0 * (1.0 - p0)
    if denom == 0.0:
        return None
    return p1 * (1.0 - p1) / denom


def conventional_odds_ratio(p1: float, p0: float) -> float | None:
    if p1 in (0.0, 1.0) or p0 in (0.0, 1.0):
        return None
    return (p1 / (1.0 - p1)) / (p0 / (1.0 - p0))


def _lift(p1: float, p: float) -> float | None:
    return None if p == 0.0 else p1 / p


def slice_metrics(
    slice: Slice,
    dataset: Dataset,
    labels: np.ndarray,
    predictions: Predictions,
    p_value: float | None = None,
    conventional_or: bool = False,
) -> SliceMetrics:
    labels = np.asarray(labels).astype(np.int64)
    preds = predictions.values if isinstance(predictions, Predictions) else np.asarray(predictions)
    n = dataset.n_rows
    if len(labels) != n or len(preds) != n:
        raise ValueError("labels and predictions must align with the dataset rows")
    in_slice = slice.mask(n)
    n_s = int(in_slice.sum())
    if n_s == 0 or n_s == n:
        raise ValueError("slice and its complement must both be non-empty")
    correct = (labels == preds).astype(np.int64)

    y_slice = labels[in_slice].mean()
    y_rest = labels[~in_slice].mean()
    y_all = labels.mean()
    acc_slice = correct[in_slice].mean()
    acc_rest = correct[~in_slice].mean()
    acc_all = correct.mean()

    support = n_s / n
    outcome_diff = float(abs(y_all - y_slice))
    accuracy_diff = float(abs(acc_all - acc_slice))
    return SliceMetrics(
        group_size=n_s,
        support=support,
        num_criteria=count_criteria(slice.predicate),
        outcome_diff=outcome_diff,
        accuracy_diff=accuracy_diff,
        odds_ratio_outcome=report_odds_ratio(float(y_slice), float(y_rest)),
        odds_ratio_acc=report_odds_ratio(float(acc_slice), float(acc_rest)),
        lift_outcome=_lift(float(y_slice), float(y_all)),
        lift_acc=_lift(float(acc_slice), float(acc_all)),
        weighted_relative_y=support * outcome_diff,
        weighted_relative_acc=support * accuracy_diff,
        p_value_bootstrap=p_value,
        conventional_or_outcome=conventional_odds_ratio(float(y_slice), float(y_rest)) if conventional_or else None,
        conventional_or_acc=conventional_odds_ratio(float(acc_slice), float(acc_rest)) if conventional_or else None,
    )


def consistency_check(metrics: SliceMetrics, dataset_size: int) -> list[str]:
    """Return human-readable violations; empty when the record is self-consistent."""
    problems = []
    if not 0.0 <= metrics.support <= 1.0:
        problems.append(f"support: {metrics.support} outside [0, 1]")
    if abs(metrics.support * dataset_size - metrics.group_size) > 1.0:
        problems.append(
            f"support: support * dataset_size = {metrics.support * dataset_size:.3f} "
            f"does not match group_size {metrics.group_size}"
        )
    if metrics.num_criteria < 1:
        problems.append(f"num_criteria: {metrics.num_criteria} < 1")
    if metrics.weighted_relative_y != metrics.support * metrics.outcome_diff:
        problems.append("weighted_relative_y: not equal to support * outcome_diff")
    if metrics.weighted_relative_acc != metrics.support * metrics.accuracy_diff:
        problems.append("weighted_relative_acc: not equal to support * accuracy_diff")
    if metrics.accuracy_diff == 0.0 and metrics.lift_acc is not None and metrics.lift_acc != 1.0:
        problems.append(f"lift_acc: slice accuracy equals overall but lift_acc = {metrics.lift_acc}")
    return problems
