"""Data-driven operationalization: find the slice with the largest accuracy gap.

A shallow regression tree is grown on the correctness vector (variance reduction,
midpoint thresholds). Every node of depth below ``max_depth`` then proposes its own
path extended by one more threshold on any feature, in both directions. The tree's
own children are among these proposals, and at the root they are exactly the
single-threshold slices, so the search never does worse than one threshold.

The objective for a slice ``S`` is ``|mean(c[S]) - mean(c[~S])|`` where ``~S`` is the
rest of the dataset. Both ``S`` and ``~S`` must hold at least ``min_group_size`` rows
and ``S`` at most ``max_group_size``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dataset import ColumnKind, Dataset
from .predicate import Comparison, InSet, Node, conjoin, render


class NoValidSplit(ValueError):
    pass


@dataclass(frozen=True)
class SplitConstraints:
    min_group_size: int = 10
    max_group_size: int | None = None
    max_depth: int = 3

    def __post_init__(self):
        if self.min_group_size < 1:
            raise ValueError("min_group_size must be >= 1")
        if self.max_group_size is not None and self.max_group_size < self.min_group_size:
            raise ValueError("max_group_size must be >= min_group_size")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def admits(self, size: int, n_rows: int) -> bool:
        if size < self.min_group_size or n_rows - size < self.min_group_size:
            return False
        return self.max_group_size is None or size <= self.max_group_size


@dataclass(frozen=True)
class SplitResult:
    predicate: Node
    gap: float
    group_size: int
    depth: int

    def key(self):
        return (-self.gap, self.depth, render(self.predicate))


def gap_from_counts(k_slice: int, n_slice: int, k_total: int, n_total: int) -> float:
    """Absolute mean difference between a slice and the rest, from integer counts."""
    return abs(k_slice / n_slice - (k_total - k_slice) / (n_total - n_slice))


def _correctness(correctness, n_rows: int) -> np.ndarray:
    c = np.asarray(correctness)
    if c.shape != (n_rows,):
        raise ValueError(f"correctness has shape {c.shape}, expected ({n_rows},)")
    if not np.isin(c, (0, 1)).all():
        raise ValueError("correctness must be 0/1")
    return c.astype(np.int64)


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    return mid if a <= mid < b else a


def _threshold_value(t: float):
    return int(t) if float(t).is_integer() else float(t)


def _scan(x: np.ndarray, c: np.ndarray, rows: np.ndarray):
    """Yield ``(threshold, n_left, k_left)`` for every midpoint of ``x[rows]``."""
    order = np.argsort(x[rows], kind="stable")
    xs = x[rows][order]
    cs = np.cumsum(c[rows][order])
    boundaries = np.flatnonzero(xs[1:] != xs[:-1])
    for i in boundaries:
        yield _midpoint(float(xs[i]), float(xs[i + 1])), int(i + 1), int(cs[i])


@dataclass
class _Node:
    rows: np.ndarray
    path: tuple
    depth: int


def _grow(x_cols: dict, c: np.ndarray, constraints: SplitConstraints) -> list[_Node]:
    """Nodes of a variance-reduction tree whose depth is below ``max_depth``."""
    root = _Node(np.arange(len(c)), (), 0)
    out, frontier = [], [root]
    while frontier:
        node = frontier.pop(0)
        out.append(node)
        if node.depth + 1 >= constraints.max_depth:
            continue
        n = len(node.rows)
        k = int(c[node.rows].sum())
        best = None
        for name, x in x_cols.items():
            for t, n_l, k_l in _scan(x, c, node.rows):
                n_r, k_r = n - n_l, k - k_l
                if n_l < constraints.min_group_size or n_r < constraints.min_group_size:
                    continue
                # SSE reduction of a 0/1 target split into two parts
                gain = (k_l / n_l - k_r / n_r) ** 2 * n_l * n_r / n
                if gain > 0 and (best is None or gain > best[0]):
                    best = (gain, name, t)
        if best is None:
            continue
        _, name, t = best
        left = node.rows[x_cols[name][node.rows] <= t]
        right = node.rows[x_cols[name][node.rows] > t]
        tv = _threshold_value(t)
        frontier.append(_Node(left, node.path + (Comparison(name, "<=", tv),), node.depth + 1))
        frontier.append(_Node(right, node.path + (Comparison(name, ">", tv),), node.depth + 1))
    return out


def _numeric_candidates(x_cols: dict, c: np.ndarray, constraints: SplitConstraints):
    n = len(c)
    k_total = int(c.sum())
    best: SplitResult | None = None
    for node in _grow(x_cols, c, constraints):
        k_node = int(c[node.rows].sum())
        n_node = len(node.rows)
        depth = node.depth + 1
        for name, x in x_cols.items():
            for t, n_l, k_l in _scan(x, c, node.rows):
                tv = _threshold_value(t)
                for op, size, k in (("<=", n_l, k_l), (">", n_node - n_l, k_node - k_l)):
                    if not constraints.admits(size, n):
                        continue
                    gap = gap_from_counts(k, size, k_total, n)
                    if best is not None and gap < best.gap:
                        continue
                    cand = SplitResult(conjoin(list(node.path) + [Comparison(name, op, tv)]), gap, size, depth)
                    if best is None or cand.key() < best.key():
                        best = cand
    return best


def best_numeric_split(dataset: Dataset, correctness, features, constraints: SplitConstraints) -> SplitResult:
    n = dataset.n_rows
    c = _correctness(correctness, n)
    x_cols = {}
    for name in features:
        col = dataset.column(name)
        if col.kind is not ColumnKind.NUMERIC:
            raise ValueError(f"feature {name!r} is not numeric; use optimal_categorical_split")
        x_cols[name] = np.asarray(col.values, dtype=float)
    if not x_cols:
        raise ValueError("no features given")
    best = _numeric_candidates(x_cols, c, constraints)
    if best is None or best.gap == 0.0:
        raise NoValidSplit("no slice satisfies the size constraints with a positive accuracy gap")
    return best


def optimal_split_query(dataset: Dataset, correctness, features, constraints: SplitConstraints) -> Node:
    """Predicate over numeric ``features`` with the largest slice-vs-rest accuracy gap."""
    return best_numeric_split(dataset, correctness, features, constraints).predicate


def categorical_subsets(categories, max_subset_size: int):
    """Value subsets considered for a categorical split, in enumeration order."""
    k = len(categories)
    for size in range(1, min(max_subset_size, k - 1) + 1):
        yield from itertools.combinations(categories, size)


def best_categorical_split(
    dataset: Dataset, correctness, feature: str, constraints: SplitConstraints, max_subset_size: int = 3
) -> SplitResult:
    n = dataset.n_rows
    c = _correctness(correctness, n)
    col = dataset.column(feature)
    if col.kind is ColumnKind.NUMERIC:
        raise ValueError(f"feature {feature!r} is numeric; use optimal_split_query")
    cats = col.observed_values()
    if len(cats) < 2:
        raise NoValidSplit(f"feature {feature!r} has fewer than 2 observed values")
    k_total = int(c.sum())
    sizes = {v: int(np.count_nonzero(col.values == v)) for v in cats}
    correct = {v: int(c[col.values == v].sum()) for v in cats}
    best = None
    for subset in categorical_subsets(cats, max_subset_size):
        size = sum(sizes[v] for v in subset)
        if not constraints.admits(size, n):
            continue
        gap = gap_from_counts(sum(correct[v] for v in subset), size, k_total, n)
        if len(subset) == 1 and col.kind is ColumnKind.BOOLEAN:
            pred = Comparison(feature, "==", bool(subset[0]))
        else:
            pred = InSet(feature, tuple(bool(v) if col.kind is ColumnKind.BOOLEAN else v for v in subset))
        cand = SplitResult(pred, gap, size, 1)
        if best is None or cand.key() < best.key():
            best = cand
    if best is None or best.gap == 0.0:
        raise NoValidSplit(f"no subset of {feature!r} satisfies the size constraints with a positive gap")
    return best


def optimal_categorical_split(
    dataset: Dataset, correctness, feature: str, constraints: SplitConstraints, max_subset_size: int = 3
) -> Node:
    return best_categorical_split(dataset, correctness, feature, constraints, max_subset_size).predicate


def best_split(dataset: Dataset, correctness, features, constraints: SplitConstraints,
               max_subset_size: int = 3) -> SplitResult:
    """Best split over mixed features: numeric ones through the tree, others by subsets."""
    numeric = [f for f in features if dataset.column(f).kind is ColumnKind.NUMERIC]
    other = [f for f in features if f not in numeric]
    found = []
    if numeric:
        try:
            found.append(best_numeric_split(dataset, correctness, numeric, constraints))
        except NoValidSplit:
            pass
    for f in other:
        try:
            found.append(best_categorical_split(dataset, correctness, f, constraints, max_subset_size))
        except NoValidSplit:
            pass
    if not found:
        raise NoValidSplit(f"no valid split over {list(features)}")
    return min(found, key=SplitResult.key)
