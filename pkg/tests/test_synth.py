import numpy as np
import pytest

from smart_testing.dataset import write_csv
from smart_testing.pipeline import AuditConfig, audit
from smart_testing.synth import (
    IRRELEVANT_CATEGORIES,
    IRRELEVANT_PROBS,
    SCENARIOS,
    SynthConfig,
    add_irrelevant_features,
    covariate_subgroups,
    fit_and_predict,
    gen_recidivism,
    gen_scenario,
    irrelevant_fraction,
    run_fnr_experiment,
    subgroup_provider,
)

# upper 5% points of the chi-square distribution by degrees of freedom
CHI2_CRIT_05 = {1: 3.841, 2: 5.991, 3: 7.815, 4: 9.488, 5: 11.070}


def chi2_independent(x, y) -> bool:
    """Pearson chi-square test of a contingency table; True if not significant at 0.05."""
    xs, xi = np.unique(np.asarray(x), return_inverse=True)
    ys, yi = np.unique(np.asarray(y), return_inverse=True)
    table = np.zeros((len(xs), len(ys)))
    np.add.at(table, (xi, yi), 1)
    expected = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / table.sum()
    stat = ((table - expected) ** 2 / expected).sum()
    return stat < CHI2_CRIT_05[(len(xs) - 1) * (len(ys) - 1)]


def test_zero_coefficients_give_fair_coin():
    ds = gen_recidivism(SynthConfig(n_rows=10_000, delta=(0, 0, 0), noise_sigma=0.0, seed=3))
    assert abs(ds.labels().mean() - 0.5) <= 0.03


def test_age_lowers_outcome_rate():
    ds = gen_recidivism(SynthConfig(n_rows=10_000, delta=(0.5, 0.5, 0.5), seed=1))
    age, y = ds["age"], ds.labels()
    q1, q3 = np.quantile(age, [0.25, 0.75])
    assert y[age >= q3].mean() < y[age <= q1].mean()


def test_schema_and_ranges():
    ds = gen_recidivism(SynthConfig(n_rows=2000))
    assert list(ds.column_names) == ["gender", "race", "age", "income", "education", "recidivism"]
    assert ds["age"].min() >= 18 and ds["age"].max() <= 70
    assert set(ds.column("race").categories) == {"white", "black", "other"}
    assert set(np.unique(ds.labels())) == {0, 1}


def csv_bytes(ds, path):
    write_csv(ds, path, write_schema=False)
    return path.read_bytes()


def test_generators_deterministic(tmp_path):
    f = tmp_path / "d.csv"
    a = csv_bytes(gen_recidivism(SynthConfig(n_rows=300, seed=5)), f)
    b = csv_bytes(gen_recidivism(SynthConfig(n_rows=300, seed=5)), f)
    c = csv_bytes(gen_recidivism(SynthConfig(n_rows=300, seed=6)), f)
    assert a == b != c
    for kind in SCENARIOS:
        assert csv_bytes(gen_scenario(kind, 200, 4), f) == csv_bytes(gen_scenario(kind, 200, 4), f)


@pytest.mark.parametrize("bad", [dict(n_rows=0), dict(noise_sigma=-1), dict(tau=1.5), dict(delta=(1, 1))])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_irrelevant_frequencies():
    base = gen_recidivism(SynthConfig(n_rows=20_000, seed=2))
    ds = add_irrelevant_features(base, 4, seed=9)
    new = [c for c in ds.column_names if c.startswith("synth_irrelevant_")]
    assert new == [f"synth_irrelevant_{i}" for i in range(4)]
    for name in new:
        v = ds[name]
        if ds.column(name).kind.value == "numeric":
            assert set(np.unique(v)) <= {0, 1}
            assert abs(v.mean() - 0.1) <= 0.03
        else:
            for cat, p in zip(IRRELEVANT_CATEGORIES, IRRELEVANT_PROBS):
                assert abs((v == cat).mean() - p) <= 0.03


def test_irrelevant_both_types_occur():
    base = gen_recidivism(SynthConfig(n_rows=50))
    kinds = {add_irrelevant_features(base, 1, s).column("synth_irrelevant_0").kind.value for s in range(30)}
    assert kinds == {"numeric", "categorical"}


def test_irrelevant_rejects_zero_and_disambiguates():
    base = gen_recidivism(SynthConfig(n_rows=50))
    with pytest.raises(ValueError):
        add_irrelevant_features(base, 0, 1)
    twice = add_irrelevant_features(add_irrelevant_features(base, 2, 1), 2, 2)
    assert len(set(twice.column_names)) == len(twice.column_names) == 10


def test_irrelevant_independent_of_target():
    ok = []
    for seed in range(40):
        ds = add_irrelevant_features(gen_recidivism(SynthConfig(n_rows=1000, seed=seed)), 1, seed + 100)
        ok.append(chi2_independent(ds["synth_irrelevant_0"], ds.labels()))
    assert np.mean(ok) >= 0.9


def test_chi2_helper_detects_dependence():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, 1000)
    assert not chi2_independent(x, x ^ (rng.random(1000) < 0.2))


def test_uniform_scenario_ranges():
    ds = gen_scenario("uniform", 5000, 0)
    for col, lo, hi in [("N_runs", 1, 499), ("M_pref", 1, 5), ("F_color", 1, 6), ("P_season", 0, 3)]:
        assert ds[col].min() == lo and ds[col].max() == hi
    assert ds["A_rainfall"].min() >= 20000 and ds["A_rainfall"].max() <= 99999
    assert abs(ds.labels().mean() - 0.5) <= 0.03


def test_skewed_scenario_frequencies():
    ds = gen_scenario("skewed", 20_000, 1)
    assert abs(ds["M_pref"].mean() - 0.5) <= 0.03
    assert abs(ds["F_color"].mean() - 0.1) <= 0.03
    assert abs(ds["P_season"].mean() - 0.05) <= 0.03
    for code, p in enumerate(IRRELEVANT_PROBS):
        assert abs((ds["A_rainfall"] == code).mean() - p) <= 0.03


def test_interaction_columns_exact():
    ds = gen_scenario("interactions", 3000, 2)
    assert np.array_equal(ds["A_run_hap"], ds["N_runs"] * ds["M_pref"])
    assert np.array_equal(ds["A_music_hap"], ds["M_pref"] * ds["A_rainfall"])


def test_unknown_scenario():
    with pytest.raises(ValueError):
        gen_scenario("chaotic", 10, 0)


@pytest.mark.parametrize("kind", SCENARIOS)
def test_scenario_covariates_independent_of_y(kind):
    for col in gen_scenario(kind, 10, 0).feature_names():
        ok = []
        for seed in range(100):
            ds = gen_scenario(kind, 2000, seed)
            x = ds[col]
            if len(np.unique(x)) > 6:
                x = np.digitize(x, np.quantile(x, [0.25, 0.5, 0.75]))
            ok.append(chi2_independent(x, ds.labels()))
        assert np.mean(ok) >= 0.9, col


def test_covariate_subgroups():
    ds = gen_recidivism(SynthConfig(n_rows=500))
    groups = covariate_subgroups(ds)
    assert sum(len(v) for v in groups.values()) == 2 + 3 + 1 + 3 + 3
    (age,) = groups["age"]
    assert age.predicate == f"age > {age.value}"
    assert age.matches("age <= 30") and not age.matches('race == "white"')
    white = [g for g in groups["race"] if g.value == "white"][0]
    assert white.matches('race == "white" and age > 40')
    assert not white.matches('race == "black"')


def test_irrelevant_fraction():
    assert irrelevant_fraction([]) is None
    assert irrelevant_fraction(['synth_irrelevant_0 == "a" and age > 3', "income == \"low\""]) == pytest.approx(1 / 3)


def test_zero_corruption_control():
    # with nothing planted, Bonferroni-flagged subgroups stay near alpha
    flagged = total = 0
    for run in range(10):
        mr = fit_and_predict(gen_recidivism(SynthConfig(n_rows=5000, seed=run)), run)
        provider = subgroup_provider(mr.audit_data)
        res = audit(mr.audit_data, mr.predictions, provider, AuditConfig(n_hypotheses=12, seed=run))
        flagged += sum(r.significant for r in res.tested)
        total += len(res.tested)
    assert total == 120
    assert flagged / total <= 0.05


def test_fnr_zero_corruption_flags_nothing():
    r = run_fnr_experiment(1, 5, SynthConfig(corruption_p=0.0), include_baseline=False)
    assert r.smart.mean == 1.0


def test_fnr_small_run():
    r = run_fnr_experiment(1, 5, SynthConfig(), include_baseline=False)
    assert r.smart.mean == 0.0 and len(r.smart.values) == 5
    with pytest.raises(ValueError):
        run_fnr_experiment(6, 1)
