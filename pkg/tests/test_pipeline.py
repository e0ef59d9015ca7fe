import numpy as np
import pytest

from smart_testing.dataset import Dataset, make_categorical, make_numeric
from smart_testing.falsify import SliceTestResult, TestConfig, UntestedResult
from smart_testing.hypothesis import FileProvider, Hypothesis, ProviderError, ScriptedProvider
from smart_testing.model import Predictions
from smart_testing.pipeline import AuditConfig, audit, mentioned_columns
from smart_testing.splitter import SplitConstraints

GEN = "\n".join([
    "Hypothesis 1: Older people are misclassified more often; Justification 1: Late-life records are sparse.",
    "Hypothesis 2: The race column hides a weak group; Justification 2: Minority rows are rare.",
    "Hypothesis 3: Errors concentrate at some age band; Justification 3: Age interacts with the outcome.",
    "Hypothesis 4: Shoe size matters; Justification 4: No reason at all.",
])


def make_data(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 90, n)
    race = rng.choice(["white", "black", "other"], n)
    y = rng.integers(0, 2, n)
    wrong = np.where(age >= 60, rng.random(n) < 0.5, rng.random(n) < 0.05)
    preds = Predictions(np.where(wrong, 1 - y, y).astype(np.int8), "external_column")
    ds = Dataset("d", (make_numeric("age", age), make_categorical("race", race), make_numeric("y", y)), "y")
    return ds, preds


def script(adjust=("Condition: race == 'white'", "Condition: nothing > 1", "Condition: nope == 2")):
    ops = {0: "age >= 60", 1: "race == 'purple'", 2: "age > 500", 3: "shoe_size > 44"}
    return ["The covariates plausibly relate to errors.", "Yes", GEN, repr(ops), *adjust]


CFG = AuditConfig(n_hypotheses=4, max_adjust_iters=1, test=TestConfig(bootstrap_B=500))


@pytest.fixture(scope="module")
def result():
    ds, preds = make_data()
    provider = ScriptedProvider(script())
    res = audit(ds, preds, provider, CFG)
    return res, provider


def test_flow_and_call_count(result):
    res, provider = result
    assert res.feasible
    assert provider.calls == 7  # verdict pair, generation, operationalization, three repairs
    assert [h.id for h in res.hypotheses] == [0, 1, 2, 3]


def test_operationalizations(result):
    res, _ = result
    ops = {h.id: h.operationalization for h in res.hypotheses}
    assert ops[0] == "age >= 60"
    assert ops[1] == "race == 'white'"  # repaired query kept as written
    assert ops[2].startswith("age ")  # repair failed; data-driven split on the mentioned column
    assert [(h.id, reason) for h, reason in res.untestable] == [
        (3, "no operationalization and no recognizable columns")]
    assert any("hypothesis 2: data-driven split fitted on the test rows" in n for n in res.notes)


def test_planted_slice_ranked_first(result):
    res, _ = result
    top = res.tested[0]
    assert top.hypothesis_id == 0 and top.significant
    assert {r.hypothesis_id for r in res.tested} == {0, 1, 2}
    assert set(res.metrics) == {0, 1, 2}
    assert res.metrics[0].group_size == top.group_size


def test_infeasible_stops_early():
    ds, preds = make_data(300)
    provider = ScriptedProvider(["No mechanism.", "No"])
    res = audit(ds, preds, provider, CFG)
    assert not res.feasible and res.results == [] and provider.calls == 2


def test_provider_failure_propagates():
    ds, preds = make_data(300)
    with pytest.raises(ProviderError):
        audit(ds, preds, ScriptedProvider(["analysis"]), CFG)


def test_nsf_keeps_provider_order():
    ds, preds = make_data(500)
    res = audit(ds, preds, ScriptedProvider(script()), AuditConfig(n_hypotheses=4, max_adjust_iters=1, nsf=True))
    assert all(isinstance(r, UntestedResult) for r in res.results)
    assert [r.hypothesis_id for r in res.results] == [0, 1, 2]
    assert res.tested == []


def test_parallel_matches_serial():
    ds, preds = make_data(800, seed=3)
    a = audit(ds, preds, ScriptedProvider(script()), CFG)
    from dataclasses import replace

    b = audit(ds, preds, ScriptedProvider(script()), replace(CFG, n_jobs=4))
    assert a.results == b.results and a.metrics == b.metrics
    assert a.config.snapshot() == b.config.snapshot()


def test_data_driven_ops_uses_exploration_rows():
    ds, preds = make_data(2000, seed=5)
    gen = ["ok", "Yes", GEN]
    cfg = AuditConfig(n_hypotheses=4, data_driven_ops=True, explore_fraction=0.5,
                      split=SplitConstraints(min_group_size=50, max_depth=1), test=TestConfig(bootstrap_B=500))
    res = audit(ds, preds, ScriptedProvider(gen), cfg)
    assert res.n_rows == 1000
    assert not any("fitted on the test rows" in n for n in res.notes)
    ops = {h.id: h.operationalization for h in res.hypotheses}
    assert ops[1].startswith("race ") and ops[2].startswith("age ")
    # hypotheses 0 and 3 name no column, so there is nothing to split on
    assert sorted(h.id for h, _ in res.untestable) == [0, 3]


def test_file_provider_skips_prompts():
    ds, preds = make_data(500)
    provider = FileProvider([
        {"text": "Old age hurts", "justification": "sparse", "operationalization": "age >= 60"},
        {"text": "race matters", "justification": "rare groups"},
    ])
    res = audit(ds, preds, provider, AuditConfig(test=TestConfig(bootstrap_B=200)))
    assert [h.operationalization for h in res.hypotheses][0] == "age >= 60"
    assert res.hypotheses[1].operationalization.startswith("race ")


def test_requires_target_and_alignment():
    ds, preds = make_data(100)
    with pytest.raises(ValueError):
        audit(ds.drop(["y"]), preds, ScriptedProvider([]), CFG)
    with pytest.raises(ValueError):
        audit(ds, Predictions(preds.values[:50], "external_column"), ScriptedProvider([]), CFG)


def test_mentioned_columns():
    cols = ["age", "income_band", "race"]
    assert mentioned_columns("People with a low income band and high AGE", cols) == ["age", "income_band"]
    assert mentioned_columns("stage of disease", cols) == []
