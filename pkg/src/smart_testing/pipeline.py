"""In-process audit: context, feasibility, hypotheses, operationalization, falsification."""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, describe, split_indices
from .falsify import SliceTestResult, TestConfig, UntestedResult, run_falsification, smart_nsf_rank
from .hypothesis import (
    AdjustmentFailure,
    FileProvider,
    Hypothesis,
    HypothesisProvider,
    ParseFailure,
    PromptBundle,
    adjust_query,
    build_generation_prompt,
    build_operationalization_prompt,
    feasibility_check,
    parse_hypothesis_response,
    parse_operationalization_response,
    with_operationalization,
)
from .metrics import SliceMetrics, slice_metrics
from .model import Predictions
from .predicate import PredicateError, columns_referenced, eval_predicate, parse_predicate, render
from .splitter import NoValidSplit, SplitConstraints, best_split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditConfig:
    task_prose: str = ""
    external_context: str = ""
    requirements: str = ""
    n_hypotheses: int = 5
    feasibility: bool = True
    n_refine: int = 0
    data_driven_ops: bool = False
    nsf: bool = False
    explore_fraction: float = 0.5
    max_adjust_iters: int = 3
    split: SplitConstraints = field(default_factory=SplitConstraints)
    test: TestConfig = field(default_factory=TestConfig)
    n_jobs: int = 1
    seed: int = 0

    def snapshot(self) -> dict:
        """Settings that determine results; worker count is excluded."""
        snap = asdict(self)
        snap.pop("n_jobs")
        return snap


@dataclass
class AuditResult:
    feasible: bool
    hypotheses: list[Hypothesis]
    results: list  # SliceTestResult, or UntestedResult under the ablation
    metrics: dict[int, SliceMetrics]
    untestable: list[tuple[Hypothesis, str]]
    config: AuditConfig
    n_rows: int
    transcript_digest: str
    transcript: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def tested(self) -> list[SliceTestResult]:
        return [r for r in self.results if isinstance(r, SliceTestResult)]

    def hypothesis(self, hid: int) -> Hypothesis:
        for h in self.hypotheses:
            if h.id == hid:
                return h
        raise KeyError(hid)


def mentioned_columns(text: str, columns) -> list[str]:
    """Columns named in free text, matching underscores loosely against spaces."""
    found = []
    low = text.lower()
    for name in columns:
        pattern = re.escape(name.lower()).replace("_", "[_ ]")
        if re.search(rf"(?<![A-Za-z0-9_]){pattern}(?![A-Za-z0-9_])", low):
            found.append(name)
    return found


def _generate(provider, bundle: PromptBundle) -> list[Hypothesis]:
    if isinstance(provider, FileProvider):
        return provider.hypotheses()
    response = provider.complete(build_generation_prompt(bundle))
    return parse_hypothesis_response(response, bundle.n_hypotheses)


def _suggested_queries(provider, hypotheses, context, schema) -> dict[int, str]:
    pending = [h for h in hypotheses if not h.operationalization]
    out = {h.id: h.operationalization for h in hypotheses if h.operationalization}
    if not pending or isinstance(provider, FileProvider):
        return out
    response = provider.complete(build_operationalization_prompt(pending, context))
    try:
        parsed = parse_operationalization_response(response, schema)
    except ParseFailure as exc:
        log.warning("operationalization response unparsable: %s", exc)
        return out
    for pos, h in enumerate(pending):
        if pos in parsed.queries:
            out[h.id] = parsed.queries[pos]
        elif pos in parsed.invalid:
            out[h.id] = parsed.invalid[pos][0]
    return out


def _fallback_features(h: Hypothesis, query: str | None, features: Dataset) -> list[str]:
    cols = mentioned_columns(h.text, features.column_names)
    if query:
        try:
            cols += [c for c in columns_referenced(parse_predicate(query)) if c in features and c not in cols]
        except PredicateError:
            pass
    return cols


def audit(
    dataset: Dataset,
    predictions: Predictions,
    provider: HypothesisProvider,
    config: AuditConfig = AuditConfig(),
) -> AuditResult:
    """Run the four-step audit of ``predictions`` against ``dataset``'s target."""
    if dataset.target_column is None:
        raise ValueError("dataset has no target column")
    predictions.check_aligned(dataset)
    labels = dataset.labels()
    features = dataset.drop([dataset.target_column])
    context = describe(features, config.task_prose)

    def finish(feasible, hypotheses, results, metrics, untestable, n_rows, notes):
        return AuditResult(feasible, hypotheses, results, metrics, untestable, config, n_rows,
                           provider.transcript_digest(), provider.transcript_text(), notes)

    notes: list[str] = []
    if config.feasibility and not isinstance(provider, FileProvider):
        if not feasibility_check(context, config.task_prose, provider, config.n_refine):
            notes.append("feasibility check: no plausible relationship between covariates and outcome")
            return finish(False, [], [], {}, [], dataset.n_rows, notes)

    bundle = PromptBundle(context, config.n_hypotheses, config.external_context, config.requirements)
    hypotheses = _generate(provider, bundle)

    # data for fitting data-driven splits vs data for testing
    correct = (labels == predictions.values).astype(np.int8)
    if config.data_driven_ops:
        test_idx, explore_idx = split_indices(dataset.n_rows, config.explore_fraction, config.seed)
        explore = features.take(explore_idx)
        explore_correct = correct[explore_idx]
    else:
        test_idx = np.arange(dataset.n_rows)
        explore, explore_correct = features, correct
    test_data = features.take(test_idx)
    test_labels = labels[test_idx]
    test_preds = Predictions(predictions.values[test_idx], predictions.source)

    suggested = {} if config.data_driven_ops else _suggested_queries(provider, hypotheses, context, features)

    operationalized, untestable = [], []
    for h in hypotheses:
        query = suggested.get(h.id)
        final = None
        if query is not None:
            try:
                final = adjust_query(query, test_data, provider, config.max_adjust_iters, h.text)
            except AdjustmentFailure as exc:
                log.info("hypothesis %d: %s; falling back to data-driven split", h.id, exc)
        if final is None:
            cols = _fallback_features(h, query, features)
            if not cols:
                untestable.append((h, "no operationalization and no recognizable columns"))
                continue
            if not config.data_driven_ops:
                notes.append(f"hypothesis {h.id}: data-driven split fitted on the test rows")
            try:
                final = render(best_split(explore, explore_correct, cols, config.split).predicate)
            except NoValidSplit as exc:
                untestable.append((h, f"no valid data-driven split: {exc}"))
                continue
        operationalized.append(with_operationalization(h, final))

    hyps_out = operationalized + [h for h, _ in untestable]
    hyps_out.sort(key=lambda h: h.id)

    metrics: dict[int, SliceMetrics] = {}
    if config.nsf:
        results = smart_nsf_rank(operationalized)
        p_values = {}
    else:
        results = run_falsification(operationalized, test_data, test_labels, test_preds,
                                    config.test, n_jobs=config.n_jobs)
        p_values = {r.hypothesis_id: r.p_value for r in results}
    by_id = {h.id: h for h in operationalized}
    for r in results:
        sl = eval_predicate(parse_predicate(by_id[r.hypothesis_id].operationalization, test_data), test_data)
        if 0 < len(sl) < test_data.n_rows:
            metrics[r.hypothesis_id] = slice_metrics(sl, test_data, test_labels, test_preds,
                                                     p_value=p_values.get(r.hypothesis_id))
    if not config.nsf:
        skipped = {h.id for h in operationalized} - {r.hypothesis_id for r in results}
        for hid in sorted(skipped):
            notes.append(f"hypothesis {hid}: not reported (undersized slice or outside top_n)")
    return finish(True, hyps_out, results, metrics, untestable, test_data.n_rows, notes)


__all__ = ["AuditConfig", "AuditResult", "UntestedResult", "audit", "mentioned_columns"]
