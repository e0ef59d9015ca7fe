"""Synthetic data-generating processes, corruption protocols and experiment runners.

Recidivism DGP, binary logit with a single intercept::

    logit P(Y=1) = intercept - (d1 * age_z + d2 * income_c + d3 * education_c) + eps
    eps ~ Normal(noise_mu, noise_sigma)

``age_z = (age - 44) / 10`` with age uniform on {18..70}; income and education are
three-level ordinals coded -1, 0, 1. Gender and race are uniform over two and three
values and do not enter the outcome.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .baseline import BaselineConfig, exhaustive_search
from .dataset import Dataset, make_categorical, make_numeric, split_indices
from .hypothesis import HypothesisProvider, ScriptedProvider
from .model import Predictions, corrupt_on_slice, corrupt_proportion, fit_logistic, predict
from .pipeline import AuditConfig, audit
from .predicate import Comparison, InSet, eval_predicate, parse_predicate, references, render_literal, walk

log = logging.getLogger(__name__)

GENDERS = ("male", "female")
RACES = ("white", "black", "other")
INCOMES = ("low", "medium", "high")
EDUCATIONS = ("primary", "secondary", "tertiary")
COVARIATES = ("gender", "race", "age", "income", "education")
AGE_RANGE = (18, 70)
AGE_CENTER = 44.0
AGE_SCALE = 10.0
TARGET = "recidivism"


@dataclass(frozen=True)
class SynthConfig:
    n_rows: int = 5000
    seed: int = 0
    delta: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intercept: float = 0.0
    noise_mu: float = 0.0
    noise_sigma: float = 1.0
    corruption_p: float = 0.5
    tau: float = 0.0
    bernoulli_q: float = 0.5

    def __post_init__(self):
        if self.n_rows < 1:
            raise ValueError("n_rows must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name in ("corruption_p", "tau", "bernoulli_q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if len(self.delta) != 3:
            raise ValueError("delta must have three coefficients")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def gen_recidivism(config: SynthConfig = SynthConfig()) -> Dataset:
    rng = np.random.default_rng(config.seed)
    n = config.n_rows
    gender = rng.integers(0, len(GENDERS), n)
    race = rng.integers(0, len(RACES), n)
    age = rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1, n)
    income = rng.integers(0, 3, n)
    education = rng.integers(0, 3, n)
    eps = rng.normal(config.noise_mu, config.noise_sigma, n)
    d1, d2, d3 = config.delta
    age_z = (age - AGE_CENTER) / AGE_SCALE
    logit = config.intercept - (d1 * age_z + d2 * (income - 1) + d3 * (education - 1)) + eps
    y = (rng.random(n) < _sigmoid(logit)).astype(np.int64)
    return Dataset(
        "recidivism",
        (
            make_categorical("gender", np.asarray(GENDERS)[gender]),
            make_categorical("race", np.asarray(RACES)[race]),
            make_numeric("age", age),
            make_categorical("income", np.asarray(INCOMES)[income]),
            make_categorical("education", np.asarray(EDUCATIONS)[education]),
            make_numeric(TARGET, y),
        ),
        TARGET,
    )


IRRELEVANT_PREFIX = "synth_irrelevant_"
IRRELEVANT_CATEGORIES = ("a", "b", "c", "d")
IRRELEVANT_PROBS = (0.1, 0.3, 0.4, 0.2)
IRRELEVANT_BERNOULLI = 0.1


def add_irrelevant_features(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Append ``k`` columns independent of everything else.

    A fair coin picks each column's type: Bernoulli(0.1) stored as 0/1, or a
    four-level categorical with probabilities (0.1, 0.3, 0.4, 0.2).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    n = dataset.n_rows
    out = dataset
    for i in range(k):
        name = f"{IRRELEVANT_PREFIX}{i}"
        suffix = 1
        while name in out:
            name = f"{IRRELEVANT_PREFIX}{i}_{suffix}"
            suffix += 1
        if rng.random() < 0.5:
            col = make_numeric(name, (rng.random(n) < IRRELEVANT_BERNOULLI).astype(np.int64))
        else:
            idx = rng.choice(len(IRRELEVANT_CATEGORIES), size=n, p=IRRELEVANT_PROBS)
            col = make_categorical(name, np.asarray(IRRELEVANT_CATEGORIES)[idx])
        out = out.with_column(col)
    return out


SCENARIOS = ("uniform", "skewed", "interactions")


def gen_scenario(kind: str, n_rows: int, seed: int) -> Dataset:
    """Datasets where no covariate carries information about ``Y``."""
    if kind not in SCENARIOS:
        raise ValueError(f"unknown scenario {kind!r}; expected one of {SCENARIOS}")
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    rng = np.random.default_rng(seed)
    n = n_rows
    cols = {}
    if kind == "uniform":
        cols["N_runs"] = rng.integers(1, 500, n)
        cols["M_pref"] = rng.integers(1, 6, n)
        cols["A_rainfall"] = rng.integers(20000, 100000, n)
        cols["F_color"] = rng.integers(1, 7, n)
        cols["P_season"] = rng.integers(0, 4, n)
    elif kind == "skewed":
        cols["N_runs"] = rng.integers(1, 500, n)
        cols["M_pref"] = rng.binomial(1, 0.5, n)
        cols["A_rainfall"] = rng.choice(4, size=n, p=IRRELEVANT_PROBS)
        cols["F_color"] = rng.binomial(1, 0.1, n)
        cols["P_season"] = rng.binomial(1, 0.05, n)
    else:
        cols["N_runs"] = rng.integers(1, 500, n)
        cols["M_pref"] = rng.binomial(1, 0.5, n)
        cols["A_rainfall"] = rng.choice(4, size=n, p=IRRELEVANT_PROBS)
        cols["A_music_hap"] = cols["M_pref"] * cols["A_rainfall"]
        cols["A_run_hap"] = cols["N_runs"] * cols["M_pref"]
    cols["Y"] = rng.integers(0, 2, n)
    return Dataset(f"scenario_{kind}", tuple(make_numeric(k, v) for k, v in cols.items()), "Y")


# -- scripted provider fixtures ------------------------------------------------

@dataclass(frozen=True)
class Subgroup:
    column: str
    value: object  # category, or the median for numeric columns
    predicate: str

    def matches(self, predicate_text: str) -> bool:
        """A reported slice identifies this subgroup if it mentions the corrupted value.

        For numeric covariates any condition on the column counts.
        """
        ast = parse_predicate(predicate_text)
        if isinstance(self.value, str):
            return references(ast, self.column, self.value)
        return references(ast, self.column)


def _number(v: float):
    return int(v) if float(v).is_integer() else float(v)


def covariate_subgroups(dataset: Dataset, covariates: Sequence[str] = COVARIATES) -> dict[str, list[Subgroup]]:
    """Single-covariate subgroups: each categorical value, or above-median for numerics."""
    out = {}
    for name in covariates:
        col = dataset.column(name)
        if col.kind.value == "numeric":
            med = _number(float(np.median(col.values)))
            out[name] = [Subgroup(name, med, f"{name} > {render_literal(med)}")]
        else:
            out[name] = [Subgroup(name, v, f"{name} == {render_literal(v)}") for v in col.categories]
    return out


FEASIBLE_ANALYSIS = (
    "Demographic and socioeconomic covariates are plausibly related to the outcome and to "
    "how well a model fits different groups, so subgroup testing is warranted."
)
INFEASIBLE_ANALYSIS = (
    "The covariates describe unrelated quantities and no mechanism links them to the outcome; "
    "any apparent subgroup differences would be noise."
)


def subgroup_script(subgroups: Sequence[Subgroup], feasible: bool = True) -> list[str]:
    """Responses for: feasibility analysis, verdict, generation, operationalization."""
    gen = []
    ops = {}
    for i, sg in enumerate(subgroups):
        gen.append(
            f"Hypothesis {i + 1}: The model underperforms for rows where {sg.predicate}; "
            f"Justification {i + 1}: Outcomes for this {sg.column} group may follow patterns "
            "that are under-represented in training."
        )
        ops[i] = sg.predicate
    return [
        FEASIBLE_ANALYSIS if feasible else INFEASIBLE_ANALYSIS,
        "Yes" if feasible else "No",
        "\n".join(gen),
        repr(ops),
    ]


def infeasible_script() -> list[str]:
    return [INFEASIBLE_ANALYSIS, "No"]


def subgroup_provider(dataset: Dataset, covariates: Sequence[str] = COVARIATES) -> ScriptedProvider:
    groups = [sg for sgs in covariate_subgroups(dataset, covariates).values() for sg in sgs]
    return ScriptedProvider(subgroup_script(groups))


# -- experiment helpers --------------------------------------------------------

@dataclass
class ModelRun:
    audit_data: Dataset
    predictions: Predictions


def fit_and_predict(data: Dataset, seed: int, audit_fraction: float = 0.5) -> ModelRun:
    """Fit the built-in logistic model on one part and predict the held-out audit part."""
    train_idx, audit_idx = split_indices(data.n_rows, audit_fraction, seed)
    model = fit_logistic(data.take(train_idx), seed=seed)
    audit_data = data.take(audit_idx)
    return ModelRun(audit_data, predict(model, audit_data))


def _run_seed(master: int, run: int) -> int:
    return int(np.random.default_rng([master, run]).integers(0, 2**31 - 1))


@dataclass
class Estimate:
    mean: float
    sd: float
    values: list[float] = field(default_factory=list)

    @classmethod
    def of(cls, values) -> "Estimate":
        arr = np.asarray(values, dtype=float)
        if len(arr) == 0:
            return cls(float("nan"), float("nan"), [])
        return cls(float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0, arr.tolist())

    def __str__(self):
        return f"{self.mean:.2f} ± {self.sd:.2f}"


@dataclass
class FNRResult:
    n_corrupted: int
    smart: Estimate
    baseline: Estimate


ProviderFactory = Callable[[Dataset], HypothesisProvider]


def run_fnr_experiment(
    n_corrupted: int,
    runs: int,
    config: SynthConfig = SynthConfig(),
    provider_factory: ProviderFactory = subgroup_provider,
    audit_config: AuditConfig | None = None,
    baseline_config: BaselineConfig = BaselineConfig(),
    include_baseline: bool = True,
) -> FNRResult:
    """False negative rate of detecting corrupted covariate subgroups."""
    if not 1 <= n_corrupted <= len(COVARIATES):
        raise ValueError(f"n_corrupted must be in 1..{len(COVARIATES)}")
    smart_fnr, base_fnr = [], []
    for run in range(runs):
        run_seed = _run_seed(config.seed, run)
        rng = np.random.default_rng([config.seed, run, 1])
        data = gen_recidivism(replace(config, seed=run_seed))
        mr = fit_and_predict(data, run_seed)
        groups = covariate_subgroups(mr.audit_data)
        chosen = [COVARIATES[i] for i in sorted(rng.choice(len(COVARIATES), n_corrupted, replace=False))]
        corrupted = []
        preds = mr.predictions
        for j, cov in enumerate(chosen):
            options = groups[cov]
            sg = options[int(rng.integers(0, len(options)))]
            corrupted.append(sg)
            sl = eval_predicate(parse_predicate(sg.predicate, mr.audit_data), mr.audit_data)
            preds = corrupt_on_slice(preds, sl, config.corruption_p, config.bernoulli_q, seed=run_seed + j)

        n_groups = sum(len(v) for v in groups.values())
        acfg = audit_config or AuditConfig(n_hypotheses=n_groups, seed=run_seed)
        res = audit(mr.audit_data, preds, provider_factory(mr.audit_data), acfg)
        flagged = [r.predicate for r in res.tested if r.significant]
        smart_fnr.append(sum(not any(sg.matches(p) for p in flagged) for sg in corrupted) / n_corrupted)

        if include_baseline:
            features = mr.audit_data.drop([TARGET])
            search = exhaustive_search(mr.audit_data, mr.audit_data.labels(), preds,
                                       replace(baseline_config, seed=run_seed),
                                       features=features.column_names)
            flagged = [r.predicate for r in search.top(baseline_config.top_k)]
            base_fnr.append(sum(not any(sg.matches(p) for p in flagged) for sg in corrupted) / n_corrupted)
    return FNRResult(n_corrupted, Estimate.of(smart_fnr), Estimate.of(base_fnr))


BIAS_GROUPS = ("white", "black")


@dataclass
class BiasCell:
    tau: float
    corrupted: str
    p_white: Estimate
    p_black: Estimate


def bias_provider(dataset: Dataset) -> ScriptedProvider:
    return subgroup_provider(dataset, covariates=("race", "gender"))


def run_bias_experiment(
    tau_grid: Sequence[float],
    runs: int,
    config: SynthConfig = SynthConfig(n_rows=100_000),
    provider_factory: ProviderFactory = bias_provider,
    n_seeds: int = 5,
    audit_fraction: float = 0.8,
) -> list[BiasCell]:
    """How often the corrupted ethnicity is the top-ranked slice, per tau and corrupted group.

    Proportions are computed over ``runs`` per seed; the reported sd is across seeds.
    """
    # hits[(tau, corrupted)][seed] -> list of (white_top, black_top)
    hits: dict[tuple[float, str], list[list[tuple[bool, bool]]]] = {
        (t, g): [[] for _ in range(n_seeds)] for t in tau_grid for g in BIAS_GROUPS
    }
    for s in range(n_seeds):
        for run in range(runs):
            run_seed = _run_seed(config.seed * 1000 + s, run)
            data = gen_recidivism(replace(config, seed=run_seed))
            mr = fit_and_predict(data, run_seed, audit_fraction)
            for ti, tau in enumerate(tau_grid):
                for gi, group in enumerate(BIAS_GROUPS):
                    ast = parse_predicate(f'race == "{group}"', mr.audit_data)
                    sl = eval_predicate(ast, mr.audit_data)
                    preds = corrupt_proportion(mr.predictions, sl, tau, seed=run_seed + 10 * ti + gi)
                    provider = provider_factory(mr.audit_data)
                    n_h = len(provider.responses[2].splitlines())
                    res = audit(mr.audit_data, preds, provider, AuditConfig(n_hypotheses=n_h, seed=run_seed))
                    top = res.tested[0].predicate if res.tested else None
                    hits[(tau, group)][s].append((
                        top is not None and references(parse_predicate(top), "race", "white"),
                        top is not None and references(parse_predicate(top), "race", "black"),
                    ))
    cells = []
    for (tau, group), per_seed in hits.items():
        pw = [np.mean([h[0] for h in runs_]) for runs_ in per_seed]
        pb = [np.mean([h[1] for h in runs_]) for runs_ in per_seed]
        cells.append(BiasCell(tau, group, Estimate.of(pw), Estimate.of(pb)))
    return cells


def condition_atoms(predicate_text: str) -> list:
    return [n for n in walk(parse_predicate(predicate_text)) if isinstance(n, (Comparison, InSet))]


def irrelevant_fraction(predicates: Sequence[str]) -> float | None:
    """Share of atomic conditions that reference a ``synth_irrelevant_*`` column."""
    atoms = [a for p in predicates for a in condition_atoms(p)]
    if not atoms:
        return None
    return sum(a.column.startswith(IRRELEVANT_PREFIX) for a in atoms) / len(atoms)


@dataclass
class IrrelevantResult:
    k: int
    smart: Estimate
    baseline: Estimate
    smart_empty_runs: int
    baseline_empty_runs: int


def run_irrelevant_experiment(
    k: int,
    runs: int,
    config: SynthConfig = SynthConfig(),
    baseline_config: BaselineConfig = BaselineConfig(),
) -> IrrelevantResult:
    """Fraction of significant slice conditions that use irrelevant synthetic columns.

    A run that reports no significant slice references no irrelevant column and
    scores 0.0; such runs are also counted separately.
    """
    smart, base = [], []
    smart_empty = base_empty = 0
    for run in range(runs):
        run_seed = _run_seed(config.seed + 7919 * k, run)
        data = add_irrelevant_features(gen_recidivism(replace(config, seed=run_seed)), k, run_seed + 1)
        mr = fit_and_predict(data, run_seed)
        provider = subgroup_provider(mr.audit_data)
        n_h = len(provider.responses[2].splitlines())
        res = audit(mr.audit_data, mr.predictions, provider, AuditConfig(n_hypotheses=n_h, seed=run_seed))
        f = irrelevant_fraction([r.predicate for r in res.tested if r.significant])
        smart_empty += f is None
        smart.append(f or 0.0)
        search = exhaustive_search(mr.audit_data, mr.audit_data.labels(), mr.predictions,
                                   replace(baseline_config, seed=run_seed),
                                   features=mr.audit_data.feature_names())
        f = irrelevant_fraction([r.predicate for r in search.top(baseline_config.top_k)])
        base_empty += f is None
        base.append(f or 0.0)
    return IrrelevantResult(k, Estimate.of(smart), Estimate.of(base), smart_empty, base_empty)


@dataclass
class ScenarioResult:
    kind: str
    smart_slices: list[int]
    baseline_significant: list[int]


SCENARIO_PROSE = "Predict whether Y is 1 from running, music, weather and color measurements."


def run_scenario_experiment(
    kind: str,
    runs: int,
    n_rows: int = 2000,
    seed: int = 0,
    baseline_config: BaselineConfig = BaselineConfig(),
) -> ScenarioResult:
    """Slices reported on data with no covariate-outcome relationship."""
    smart, base = [], []
    for run in range(runs):
        run_seed = _run_seed(seed + 104729 * SCENARIOS.index(kind), run)
        mr = fit_and_predict(gen_scenario(kind, n_rows, run_seed), run_seed)
        res = audit(mr.audit_data, mr.predictions, ScriptedProvider(infeasible_script()),
                    AuditConfig(task_prose=SCENARIO_PROSE, seed=run_seed))
        smart.append(len(res.results))
        search = exhaustive_search(mr.audit_data, mr.audit_data.labels(), mr.predictions,
                                   replace(baseline_config, seed=run_seed),
                                   features=mr.audit_data.feature_names())
        base.append(len(search.top()))
    return ScenarioResult(kind, smart, base)


__all__ = [
    "SCENARIOS", "SynthConfig", "gen_recidivism", "add_irrelevant_features", "gen_scenario",
    "covariate_subgroups", "subgroup_script", "infeasible_script", "subgroup_provider",
    "bias_provider", "fit_and_predict", "run_fnr_experiment", "run_bias_experiment",
    "run_irrelevant_experiment", "run_scenario_experiment", "irrelevant_fraction",
]
