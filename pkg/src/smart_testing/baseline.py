"""Data-only slice discovery baseline: exhaustive and beam search over conjunctions.

Each feature is turned into a set of atomic conditions. Categorical and boolean
features get one equality per value. Numeric features with at most ``numeric_bins``
distinct values are handled the same way; otherwise equal-frequency quantile edges
give ``col <= e`` and ``col > e`` conditions. Candidates are conjunctions of up to
``max_order`` conditions on distinct columns.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import ColumnKind, Dataset
from .falsify import SliceTestResult, TestConfig, test_slices
from .model import Predictions
from .predicate import Comparison, Node, Slice, conjoin, predicate_mask, render

MAX_CANDIDATES = 1_000_000


class CandidateExplosion(ValueError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    max_order: int = 2
    numeric_bins: int = 10
    beam_width: int = 20
    top_k: int = 20
    alpha: float = 0.05
    correction: str = "none"
    min_slice_size: int = 10
    bootstrap_B: int = 1000
    seed: int = 0
    max_candidates: int = MAX_CANDIDATES

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.numeric_bins < 2:
            raise ValueError("numeric_bins must be >= 2")
        if self.beam_width < 1 or self.top_k < 1:
            raise ValueError("beam_width and top_k must be >= 1")

    def test_config(self) -> TestConfig:
        return TestConfig(
            alpha=self.alpha,
            correction=self.correction,
            bootstrap_B=self.bootstrap_B,
            min_slice_size=self.min_slice_size,
            seed=self.seed,
        )


@dataclass(frozen=True)
class Condition:
    column_index: int
    order: int
    node: Comparison

    def sort_key(self):
        return (self.column_index, self.order)


@dataclass
class SearchResult:
    ranked: list[SliceTestResult]
    m: int
    n_candidates: int
    predicates: dict[int, Node] = field(default_factory=dict)

    def top(self, k: int | None = None, significant_only: bool = True) -> list[SliceTestResult]:
        rows = [r for r in self.ranked if r.significant] if significant_only else list(self.ranked)
        return rows if k is None else rows[:k]


def _number(v: float):
    return int(v) if float(v).is_integer() else float(v)


def conditions_for(dataset: Dataset, columns: Sequence[str], numeric_bins: int) -> list[list[Condition]]:
    """Atomic conditions grouped per column."""
    groups = []
    names = dataset.column_names
    for name in sorted(columns, key=names.index):
        col = dataset.column(name)
        ci = names.index(name)
        conds = []
        if col.kind is ColumnKind.NUMERIC:
            uniq = np.unique(col.values)
            if len(uniq) <= numeric_bins:
                conds = [Comparison(name, "==", _number(v)) for v in uniq]
            else:
                qs = np.quantile(col.values, np.arange(1, numeric_bins) / numeric_bins)
                # drop edges at the maximum; they would leave an empty upper side
                edges = [e for e in np.unique(qs) if e < uniq[-1]]
                for e in edges:
                    conds.append(Comparison(name, "<=", _number(e)))
                    conds.append(Comparison(name, ">", _number(e)))
        elif col.kind is ColumnKind.BOOLEAN:
            conds = [Comparison(name, "==", bool(v)) for v in col.observed_values()]
        else:
            conds = [Comparison(name, "==", v) for v in col.observed_values()]
        groups.append([Condition(ci, j, c) for j, c in enumerate(conds)])
    return groups


def count_candidates(group_sizes: Sequence[int], max_order: int) -> int:
    """Number of conjunctions of 1..max_order conditions on distinct columns."""
    # elementary symmetric polynomials of the group sizes
    e = [1] + [0] * max_order
    for s in group_sizes:
        for j in range(max_order, 0, -1):
            e[j] += e[j - 1] * s
    return sum(e[1:])


def _stream_id(text: str) -> int:
    # stable across search strategies, so a slice gets the same resampling stream in both
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:7], "big")


def _feature_columns(dataset: Dataset, features) -> list[str]:
    if features is not None:
        return list(features)
    return dataset.feature_names()


class _Evaluator:
    def __init__(self, dataset, labels, predictions, config: BaselineConfig):
        self.dataset = dataset
        self.labels = np.asarray(labels)
        self.predictions = predictions
        self.config = config
        self.masks: dict[Condition, np.ndarray] = {}

    def mask(self, conds: tuple[Condition, ...]) -> np.ndarray:
        out = None
        for c in conds:
            if c not in self.masks:
                self.masks[c] = predicate_mask(c.node, self.dataset)
            out = self.masks[c] if out is None else out & self.masks[c]
        return out

    def test(self, candidates: list[tuple[Condition, ...]]) -> tuple[list[tuple[int, Slice]], dict[int, Node]]:
        n = self.dataset.n_rows
        slices, preds = [], {}
        for conds in candidates:
            node = conjoin([c.node for c in conds])
            rows = np.flatnonzero(self.mask(conds))
            if len(rows) < self.config.min_slice_size or len(rows) == n:
                continue
            sid = _stream_id(render(node))
            preds[sid] = node
            slices.append((sid, Slice(node, rows)))
        return slices, preds


def _rank(results: list[SliceTestResult]) -> list[SliceTestResult]:
    return sorted(results, key=lambda r: (-r.delta_acc, r.predicate))


def exhaustive_search(
    dataset: Dataset,
    labels,
    predictions: Predictions,
    config: BaselineConfig = BaselineConfig(),
    features: Sequence[str] | None = None,
) -> SearchResult:
    """Test every candidate conjunction and rank by absolute accuracy difference."""
    groups = conditions_for(dataset, _feature_columns(dataset, features), config.numeric_bins)
    n_candidates = count_candidates([len(g) for g in groups], config.max_order)
    if n_candidates > config.max_candidates:
        raise CandidateExplosion(
            f"{n_candidates} candidates exceed the cap of {config.max_candidates}; "
            "lower max_order or numeric_bins"
        )
    candidates = []
    for order in range(1, config.max_order + 1):
        for combo in itertools.combinations(groups, order):
            candidates.extend(itertools.product(*combo))
    ev = _Evaluator(dataset, labels, predictions, config)
    slices, preds = ev.test(candidates)
    results = test_slices(slices, ev.labels, predictions, config.test_config())
    return SearchResult(_rank(results), len(slices), n_candidates, preds)


def beam_search(
    dataset: Dataset,
    labels,
    predictions: Predictions,
    config: BaselineConfig = BaselineConfig(),
    features: Sequence[str] | None = None,
) -> SearchResult:
    """Grow conjunctions one condition at a time, keeping the ``beam_width`` largest gaps.

    All candidates generated along the way are tested together so the multiple
    testing correction covers everything that was looked at.
    """
    groups = conditions_for(dataset, _feature_columns(dataset, features), config.numeric_bins)
    all_conds = [c for g in groups for c in g]
    ev = _Evaluator(dataset, labels, predictions, config)
    preds_arr = predictions.values if isinstance(predictions, Predictions) else np.asarray(predictions)
    correct = ev.labels == preds_arr
    overall = correct.mean()

    def gap(conds):
        m = ev.mask(conds)
        n_s = int(m.sum())
        if n_s < config.min_slice_size or n_s == dataset.n_rows:
            return None
        return abs(correct[m].mean() - overall)

    seen: set[tuple[Condition, ...]] = set()
    tested: list[tuple[Condition, ...]] = []
    frontier = [(c,) for c in all_conds]
    for order in range(1, config.max_order + 1):
        scored = []
        for conds in frontier:
            if conds in seen:
                continue
            seen.add(conds)
            g = gap(conds)
            if g is None:
                continue
            tested.append(conds)
            scored.append((-g, render(conjoin([c.node for c in conds])), conds))
        scored.sort(key=lambda t: (t[0], t[1]))
        beam = [t[2] for t in scored[: config.beam_width]]
        if order == config.max_order:
            break
        frontier = []
        for conds in beam:
            used = {c.column_index for c in conds}
            for c in all_conds:
                if c.column_index not in used:
                    frontier.append(tuple(sorted(conds + (c,), key=Condition.sort_key)))
    slices, preds = ev.test(tested)
    results = test_slices(slices, ev.labels, predictions, config.test_config())
    n_candidates = count_candidates([len(g) for g in groups], config.max_order)
    return SearchResult(_rank(results), len(slices), n_candidates, preds)


def analytic_candidate_count(dataset: Dataset, config: BaselineConfig, features=None) -> int:
    groups = conditions_for(dataset, _feature_columns(dataset, features), config.numeric_bins)
    return count_candidates([len(g) for g in groups], config.max_order)


__all__ = [
    "BaselineConfig",
    "CandidateExplosion",
    "SearchResult",
    "analytic_candidate_count",
    "beam_search",
    "conditions_for",
    "count_candidates",
    "exhaustive_search",
]
