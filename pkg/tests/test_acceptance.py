"""Acceptance criteria 1 to 9. Each test prints one PASS/FAIL line.

The lines are also collected into an "acceptance criteria" section of the
terminal summary (see conftest.py).
"""

import io
import json
import time

import httpx
import numpy as np
from hypothesis import given, settings

from smart_testing.cli import EXIT_OK, main
from smart_testing.dataset import Dataset, make_numeric, write_csv
from smart_testing.falsify import TestConfig, fwer_naive, test_slices
from smart_testing.metrics import report_odds_ratio, slice_metrics
from smart_testing.model import Predictions
from smart_testing.predicate import Slice, eval_predicate, parse_predicate, render
from smart_testing.report import fmt_num
from smart_testing.splitter import NoValidSplit, SplitConstraints, optimal_split_query
from smart_testing.synth import (
    SCENARIOS,
    SynthConfig,
    covariate_subgroups,
    gen_recidivism,
    run_bias_experiment,
    run_fnr_experiment,
    run_irrelevant_experiment,
    run_scenario_experiment,
    subgroup_script,
)

from conftest import planted_data
from test_predicate import PUBLISHED_OPERATIONALIZATIONS, SCHEMA, datasets, naive_eval, rows_of, trees
from test_splitter import exact_gap, oracle_threshold_gap, random_case, threshold_steps


def test_criterion_1_fwer(criterion):
    t0 = time.time()
    analytic = fwer_naive(20, 0.05)
    # large n keeps the lattice of the exact permutation statistic fine, so each test has size near alpha
    m, n, trials = 20, 10_000, 500
    any_naive = any_bonf = 0
    for trial in range(trials):
        rng = np.random.default_rng([101, trial])
        y = rng.integers(0, 2, n)
        p = np.where(rng.random(n) < 0.8, y, 1 - y)
        preds = Predictions(p.astype(np.int8), "external_column")
        cols = tuple(make_numeric(f"f{i}", rng.integers(0, 2, n)) for i in range(m))
        ds = Dataset("null", cols)
        slices = [(i, eval_predicate(parse_predicate(f"f{i} == 1", ds), ds)) for i in range(m)]
        naive = test_slices(slices, y, preds, TestConfig(correction="none", seed=trial))
        bonf = test_slices(slices, y, preds, TestConfig(correction="bonferroni", seed=trial))
        assert len(naive) == len(bonf) == m
        any_naive += any(r.significant for r in naive)
        any_bonf += any(r.significant for r in bonf)
    emp_naive, emp_bonf = any_naive / trials, any_bonf / trials
    elapsed = time.time() - t0
    ok = (abs(analytic - 0.6415) <= 0.0005 and abs(emp_naive - analytic) <= 0.06
          and emp_bonf <= 0.07 and elapsed < 120)
    detail = (f"fwer_naive(20, 0.05) = {analytic:.4f}; simulated uncorrected {emp_naive:.3f}, "
              f"bonferroni {emp_bonf:.3f} over {trials} trials; {elapsed:.0f}s")
    criterion(1, ok, detail)
    assert ok, detail


def test_criterion_2_fnr(criterion):
    t0 = time.time()
    cfg = SynthConfig(n_rows=5000, corruption_p=0.5)
    res = {n: run_fnr_experiment(n, 20, cfg) for n in (1, 2, 3)}
    elapsed = time.time() - t0
    ok = (res[1].smart.mean <= 0.05
          and all(res[n].smart.mean < res[n].baseline.mean for n in (2, 3))
          and elapsed < 300)
    detail = "; ".join(f"n={n}: SMART {r.smart} vs baseline {r.baseline}" for n, r in res.items())
    detail += f"; {elapsed:.0f}s"
    criterion(2, ok, detail)
    assert ok, detail


def test_criterion_3_bias(criterion):
    t0 = time.time()
    cells = run_bias_experiment([0.05, 0.2, 0.0], runs=20, n_seeds=5)
    elapsed = time.time() - t0
    by = {(c.tau, c.corrupted): c for c in cells}
    planted_ok = all(
        by[(tau, "white")].p_white.mean >= 0.9 and by[(tau, "black")].p_black.mean >= 0.9
        for tau in (0.05, 0.2)
    )
    null_ok = all(by[(0.0, g)].p_white.mean <= 0.5 and by[(0.0, g)].p_black.mean <= 0.5
                  for g in ("white", "black"))
    ok = planted_ok and null_ok and elapsed < 300
    detail = "; ".join(
        f"tau={c.tau} corrupt {c.corrupted}: P_white {c.p_white}, P_black {c.p_black}" for c in cells
    ) + f"; {elapsed:.0f}s"
    criterion(3, ok, detail)
    assert ok, detail


def test_criterion_4_irrelevant_features(criterion):
    t0 = time.time()
    res = {k: run_irrelevant_experiment(k, 20) for k in (4, 8)}
    elapsed = time.time() - t0
    ok = all(r.smart.mean == 0.0 and r.baseline.mean > 0.10 for r in res.values()) and elapsed < 300
    detail = "; ".join(f"k={k}: SMART {r.smart.mean:.2f}, baseline {r.baseline}" for k, r in res.items())
    detail += f"; {elapsed:.0f}s"
    criterion(4, ok, detail)
    assert ok, detail


def test_criterion_5_no_relationship(criterion):
    t0 = time.time()
    res = {kind: run_scenario_experiment(kind, 50, n_rows=2000) for kind in SCENARIOS}
    elapsed = time.time() - t0
    ok = all(
        sum(r.smart_slices) == 0 and sum(b > 0 for b in r.baseline_significant) >= 40
        for r in res.values()
    ) and elapsed < 180
    detail = "; ".join(
        f"{k}: SMART slices {sum(r.smart_slices)}, baseline runs with slices "
        f"{sum(b > 0 for b in r.baseline_significant)}/50" for k, r in res.items()
    ) + f"; {elapsed:.0f}s"
    criterion(5, ok, detail)
    assert ok, detail


def test_criterion_6_splitter(criterion):
    t0 = time.time()
    equal = 0
    for seed in range(100):
        ds, cols, c, min_size = random_case(1000 + seed)
        cons = SplitConstraints(min_group_size=min_size, max_depth=1)
        expected = oracle_threshold_gap(cols, c, min_size)
        try:
            pred = optimal_split_query(ds, c, list(cols), cons)
        except NoValidSplit:
            equal += not expected
            continue
        equal += exact_gap(eval_predicate(pred, ds).mask(ds.n_rows), c) == expected
    steps = []
    for seed in range(20):
        ds, _, correct = planted_data(seed=seed, stratified=True)
        steps.append(threshold_steps(optimal_split_query(ds, correct, ["age"], SplitConstraints()), ds))
    recovered = sum(s <= 1 for s in steps)
    elapsed = time.time() - t0
    ok = equal == 100 and recovered == 20 and elapsed < 60
    detail = (f"oracle gap equal in {equal}/100 datasets; planted threshold within one step "
              f"in {recovered}/20 seeds; {elapsed:.0f}s")
    criterion(6, ok, detail)
    assert ok, detail


def test_criterion_7_metrics(criterion):
    odds = report_odds_ratio(0.9, 0.5)
    labels = np.array([1, 0] * 50)
    ds = Dataset("m", (make_numeric("x", np.arange(100)), make_numeric("y", labels)), "y")
    flip = Predictions((1 - labels).astype(np.int8), "external_column")
    lift = slice_metrics(Slice(parse_predicate("x < 10"), np.arange(10)), ds, labels, flip).lift_outcome

    ref = np.zeros(100, dtype=int)
    ref[40:63] = 1
    ds = Dataset("m", (make_numeric("x", np.arange(100)), make_numeric("y", ref)), "y")
    m = slice_metrics(Slice(parse_predicate("x < 31"), np.arange(31)), ds, ref,
                      Predictions(ref.astype(np.int8), "external_column"))
    wr = m.weighted_relative_y

    ok = (abs(odds - 0.36) < 1e-12 and abs(float(fmt_num(odds)) - 0.36) <= 0.005
          and lift == 1.0
          and m.support == 0.31 and m.outcome_diff == 0.23
          and abs(wr - 0.0713) < 1e-12 and fmt_num(wr) == "0.07")
    detail = (f"odds_ratio(0.9, 0.5) = {odds!r} -> {fmt_num(odds)}; lift at equality = {lift}; "
              f"weighted_relative_y = {wr!r} -> {fmt_num(wr)}")
    criterion(7, ok, detail)
    assert ok, detail


def test_criterion_8_parser(criterion):
    t0 = time.time()
    counts = {"roundtrip": 0, "eval": 0}

    @settings(max_examples=1000, deadline=None, database=None)
    @given(trees())
    def roundtrip(ast):
        counts["roundtrip"] += 1
        assert parse_predicate(render(ast), SCHEMA) == ast

    @settings(max_examples=1000, deadline=None, database=None)
    @given(trees(with_parens=True), datasets())
    def evaluation(ast, ds):
        counts["eval"] += 1
        expected = [i for i, row in enumerate(rows_of(ds)) if naive_eval(ast, row)]
        assert eval_predicate(ast, ds).row_indices.tolist() == expected

    failures = []
    for prop in (roundtrip, evaluation):
        try:
            prop()
        except AssertionError as exc:
            failures.append(f"{prop.__name__}: {exc}")
    parsed = 0
    for text in PUBLISHED_OPERATIONALIZATIONS:
        try:
            parse_predicate(text)
            parsed += 1
        except Exception as exc:  # noqa: BLE001 - any parser error is a failure here
            failures.append(f"{text!r}: {exc}")
    elapsed = time.time() - t0
    ok = (not failures and counts["roundtrip"] >= 1000 and counts["eval"] >= 1000
          and parsed == len(PUBLISHED_OPERATIONALIZATIONS) and elapsed < 30)
    detail = (f"round trip {counts['roundtrip']} cases, eval vs oracle {counts['eval']} cases, "
              f"{parsed}/{len(PUBLISHED_OPERATIONALIZATIONS)} published operationalizations parse; "
              f"{elapsed:.0f}s" + (f"; failures: {failures[:3]}" if failures else ""))
    criterion(8, ok, detail)
    assert ok, detail


def test_criterion_9_golden_run(criterion, tmp_path, no_network):
    data = gen_recidivism(SynthConfig(n_rows=3000, seed=9))
    write_csv(data, tmp_path / "data.csv")
    groups = [g for gs in covariate_subgroups(data).values() for g in gs]
    (tmp_path / "fixtures.json").write_text(json.dumps(subgroup_script(groups)), encoding="utf-8")
    seen = []
    transport = httpx.MockTransport(lambda request: seen.append(request) or httpx.Response(500))

    def run(out_dir, jobs):
        argv = ["audit", "--data", str(tmp_path / "data.csv"), "--target", "recidivism", "--fit-logistic",
                "--provider", "scripted", "--fixtures", str(tmp_path / "fixtures.json"),
                "--n-hypotheses", str(len(groups)), "--seed", "9", "--jobs", str(jobs),
                "--out-dir", str(tmp_path / out_dir)]
        code = main(argv, out=io.StringIO(), transport=transport)
        md = (tmp_path / out_dir / "report.md").read_bytes()
        machine = (tmp_path / out_dir / "report.jsonl").read_bytes()
        return code, md, machine

    runs = [run("serial_a", 1), run("serial_b", 1), run("parallel", 4)]
    codes = [r[0] for r in runs]
    identical = runs[0][1:] == runs[1][1:] == runs[2][1:]
    n_rows = json.loads(runs[0][2].splitlines()[0])["n_rows"]
    ok = codes == [EXIT_OK] * 3 and identical and seen == [] and no_network == [] and n_rows == 1500
    detail = (f"exit codes {codes}; markdown and machine reports byte-identical across "
              f"2 serial runs and --jobs 4: {identical}; transport calls {len(seen)}, "
              f"socket attempts {len(no_network)}")
    criterion(9, ok, detail)
    assert ok, detail
