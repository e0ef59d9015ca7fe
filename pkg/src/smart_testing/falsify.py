"""Self-falsification: per-slice significance tests, Bonferroni correction and ranking."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .model import Predictions
from .predicate import Node, Slice, eval_predicate, parse_predicate, render

log = logging.getLogger(__name__)

SUPPORTED = "Supported"
NOT_SUPPORTED = "Not supported"
UNTESTED = "Untested"


class FalsificationError(ValueError):
    pass


class UndersizedSlice(FalsificationError):
    pass


class DegenerateSlice(FalsificationError):
    pass


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # not a pytest class

    alpha: float = 0.05
    correction: str = "bonferroni"
    bootstrap_B: int = 1000
    top_n: int = 20
    min_slice_size: int = 10
    seed: int = 0
    vs_overall: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.correction not in ("none", "bonferroni"):
            raise ValueError(f"unknown correction {self.correction!r}")
        if self.bootstrap_B < 100:
            raise ValueError("bootstrap_B must be >= 100")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass(frozen=True)
class SliceTestResult:
    hypothesis_id: int
    predicate: str
    group_size: int
    acc_slice: float
    acc_rest: float
    acc_overall: float
    delta_acc: float
    p_value: float
    adjusted_alpha: float
    significant: bool
    evidence: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SliceTestResult":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class UntestedResult:
    """Entry of the no-falsification ablation: provider order, no statistics."""

    hypothesis_id: int
    predicate: str
    rank: int
    evidence: str = UNTESTED


def fwer_naive(m: int, alpha: float) -> float:
    """Chance of at least one false rejection among ``m`` independent level-``alpha`` tests."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return 1.0 - (1.0 - alpha) ** m


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


def permutation_p_value(
    k_slice: int, n_slice: int, k_total: int, n_total: int, B: int, rng: np.random.Generator
) -> float:
    """Two-sided p-value for slice-vs-complement mean difference of a 0/1 vector.

    Under exchangeability the number of ones landing in a random subset is
    hypergeometric, so each permutation is drawn in O(1). Draws are made for the
    smaller side so that swapping slice and complement yields the same p-value.
    """
    n_rest = n_total - n_slice
    small = min(n_slice, n_rest)
    k_small = k_slice if n_slice <= n_rest else k_total - k_slice
    # |d| * n_slice * n_rest == |k_s * n_rest - k_r * n_slice| == |k_small * n_total - k_total * small|
    observed = abs(k_small * n_total - k_total * small)
    draws = rng.hypergeometric(k_total, n_total - k_total, small, size=B)
    null = np.abs(draws.astype(np.int64) * n_total - k_total * small)
    return float((1 + np.count_nonzero(null >= observed)) / (B + 1))


def bootstrap_vs_overall_p_value(
    correct: np.ndarray, in_slice: np.ndarray, B: int, rng: np.random.Generator
) -> float:
    """Centered bootstrap test of slice accuracy against whole-dataset accuracy.

    Row resampling is done through the multinomial counts of the four
    (in slice, correct) cells, which is equivalent and O(B).
    """
    n = len(correct)
    cells = np.array([
        np.count_nonzero(in_slice & correct),
        np.count_nonzero(in_slice & ~correct),
        np.count_nonzero(~in_slice & correct),
        np.count_nonzero(~in_slice & ~correct),
    ])
    observed = cells[0] / (cells[0] + cells[1]) - (cells[0] + cells[2]) / n
    counts = rng.multinomial(n, cells / n, size=B)
    n_s = counts[:, 0] + counts[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        acc_s = np.where(n_s > 0, counts[:, 0] / np.maximum(n_s, 1), 0.0)
    boot = acc_s - (counts[:, 0] + counts[:, 2]) / n
    extreme = np.abs(boot - observed) >= abs(observed)
    return float((1 + np.count_nonzero(extreme & (n_s > 0))) / (B + 1))


def test_slice(
    slice: Slice,
    labels: np.ndarray,
    predictions: Predictions,
    config: TestConfig,
    hypothesis_id: int = 0,
    adjusted_alpha: float | None = None,
) -> SliceTestResult:
    labels = np.asarray(labels)
    preds = predictions.values if isinstance(predictions, Predictions) else np.asarray(predictions)
    if len(labels) != len(preds):
        raise FalsificationError(f"{len(labels)} labels but {len(preds)} predictions")
    n = len(labels)
    correct = labels == preds
    in_slice = slice.mask(n)
    n_s = int(in_slice.sum())
    n_c = n - n_s
    if n_s < config.min_slice_size:
        raise UndersizedSlice(f"slice has {n_s} rows, minimum is {config.min_slice_size}")
    if n_c == 0:
        raise DegenerateSlice("slice covers every row; complement is empty")
    k_s = int(np.count_nonzero(correct & in_slice))
    k = int(np.count_nonzero(correct))
    acc_slice = k_s / n_s
    acc_rest = (k - k_s) / n_c
    acc_overall = k / n

    rng = _rng(config.seed, hypothesis_id)
    if config.vs_overall:
        p = bootstrap_vs_overall_p_value(correct, in_slice, config.bootstrap_B, rng)
    else:
        p = permutation_p_value(k_s, n_s, k, n, config.bootstrap_B, rng)
    level = config.alpha if adjusted_alpha is None else adjusted_alpha
    significant = p < level
    return SliceTestResult(
        hypothesis_id=hypothesis_id,
        predicate=render(slice.predicate),
        group_size=n_s,
        acc_slice=acc_slice,
        acc_rest=acc_rest,
        acc_overall=acc_overall,
        delta_acc=abs(acc_slice - acc_overall),
        p_value=p,
        adjusted_alpha=level,
        significant=significant,
        evidence=SUPPORTED if significant else NOT_SUPPORTED,
    )


def adjusted_level(config: TestConfig, m: int) -> float:
    if config.correction == "bonferroni" and m > 0:
        return config.alpha / m
    return config.alpha


def rank_results(results: Sequence[SliceTestResult]) -> list[SliceTestResult]:
    """p-value ascending, then effect size descending, then id."""
    return sorted(results, key=lambda r: (r.p_value, -r.delta_acc, r.hypothesis_id))


def test_slices(
    slices: Sequence[tuple[int, Slice]],
    labels: np.ndarray,
    predictions: Predictions,
    config: TestConfig,
    n_jobs: int = 1,
) -> list[SliceTestResult]:
    """Test ``(id, slice)`` pairs with a family-wide Bonferroni level; undersized slices are skipped."""
    testable = []
    for hid, sl in slices:
        n_s = len(sl)
        if n_s < config.min_slice_size or n_s == len(labels):
            log.info("skipping slice %s: %d rows", render(sl.predicate), n_s)
            continue
        testable.append((hid, sl))
    level = adjusted_level(config, len(testable))

    def run(item):
        hid, sl = item
        return test_slice(sl, labels, predictions, config, hid, adjusted_alpha=level)

    if n_jobs > 1 and len(testable) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(run, testable))
    return [run(item) for item in testable]


def run_falsification(
    hypotheses: Sequence,
    dataset: Dataset,
    labels: np.ndarray,
    predictions: Predictions,
    config: TestConfig,
    n_jobs: int = 1,
) -> list[SliceTestResult]:
    """Test each operationalized hypothesis and return the ``top_n`` best ranked."""
    slices = []
    for h in hypotheses:
        if not h.operationalization:
            raise FalsificationError(f"hypothesis {h.id} has no operationalization")
        ast = parse_predicate(h.operationalization, dataset)
        slices.append((h.id, eval_predicate(ast, dataset)))
    results = test_slices(slices, labels, predictions, config, n_jobs=n_jobs)
    return rank_results(results)[: config.top_n]


def smart_nsf_rank(hypotheses: Sequence) -> list[UntestedResult]:
    """Ablation without falsification: keep provider order, attach no statistics."""
    return [
        UntestedResult(h.id, h.operationalization or "", rank)
        for rank, h in enumerate(hypotheses)
    ]


def significant_results(results: Sequence[SliceTestResult]) -> list[SliceTestResult]:
    return [r for r in results if r.significant]


def predicate_of(result: SliceTestResult) -> Node:
    return parse_predicate(result.predicate)


# library functions whose names pytest would otherwise collect when imported into tests
test_slice.__test__ = False
test_slices.__test__ = False
