"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 provider error,
5 no feasible slices while ``--strict`` was requested.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .baseline import BaselineConfig, CandidateExplosion, beam_search, exhaustive_search
from .dataset import DatasetError, load_csv, split_indices
from .falsify import TestConfig
from .hypothesis import FileProvider, ParseFailure, ProviderError, RemoteProvider, ScriptedProvider
from .metrics import slice_metrics
from .model import fit_logistic, load_predictions, predict, predictions_from_column
from .pipeline import AuditConfig, audit
from .predicate import PredicateError, eval_predicate, parse_predicate, render
from .remote import RemoteConfig, RemoteError
from .report import (
    build_report,
    read_machine_report,
    render_markdown,
    summarize_with_provider,
    write_report_files,
)
from .splitter import NoValidSplit, SplitConstraints, best_split

log = logging.getLogger("smart_testing")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PROVIDER = 4
EXIT_STRICT = 5


class ConfigError(ValueError):
    pass


# -- argument parsing --------------------------------------------------------

def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data and model under test")
    g.add_argument("--data", required=True, metavar="CSV", help="dataset CSV (a CSV.schema sidecar is read if present)")
    g.add_argument("--target", required=True, metavar="NAME", help="binary target column")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--pred-col", metavar="NAME", help="column of the dataset holding 0/1 predictions")
    src.add_argument("--pred-file", metavar="PATH", help="CSV with a single 'prediction' column, row-aligned")
    src.add_argument("--fit-logistic", action="store_true",
                     help="fit the built-in logistic model on part of the data and audit the rest")
    g.add_argument("--fit-fraction", type=float, default=0.5,
                   help="share of rows held out for auditing with --fit-logistic (default 0.5)")


def _add_test_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("statistical testing")
    g.add_argument("--alpha", type=float, default=0.05, help="family significance level (default 0.05)")
    g.add_argument("--correction", choices=("none", "bonferroni"), default="bonferroni",
                   help="multiple-testing correction (default bonferroni)")
    g.add_argument("--bootstrap-b", type=int, default=1000, help="resamples per test (default 1000)")
    g.add_argument("--min-slice", type=int, default=10, help="smallest slice that is tested (default 10)")
    g.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")


def _add_split_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data-driven splits")
    g.add_argument("--min-group", type=int, default=10, help="minimum rows in a split slice (default 10)")
    g.add_argument("--max-group", type=int, default=None, help="maximum rows in a split slice (default none)")
    g.add_argument("--depth", type=int, default=3, help="maximum conditions in a split path (default 3)")
    g.add_argument("--max-subset", type=int, default=3,
                   help="largest value subset for categorical splits (default 3)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smart-testing",
        description="Context-aware testing of classifiers: generate, operationalize and falsify "
                    "hypotheses about where a model fails.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("audit", help="run the full audit and write a report")
    _add_data_args(p)
    g = p.add_argument_group("context and provider")
    g.add_argument("--context", default="", metavar="TEXT", help="external context for hypothesis generation")
    g.add_argument("--context-file", metavar="PATH", help="read external context from a file")
    g.add_argument("--task", default="", metavar="TEXT", help="what the model predicts, in plain words")
    g.add_argument("--requirements", default="", metavar="TEXT", help="extra requirements for hypotheses")
    g.add_argument("--provider", choices=("file", "scripted", "remote"), default="file",
                   help="where hypotheses come from (default file)")
    g.add_argument("--hypotheses", metavar="PATH", help="JSON/JSONL hypotheses for --provider file")
    g.add_argument("--fixtures", metavar="PATH", help="JSON list of responses for --provider scripted")
    g.add_argument("--endpoint", metavar="URL", help="chat-completion URL for --provider remote")
    g.add_argument("--model", metavar="NAME", help="model name for --provider remote")
    g.add_argument("--temperature", type=float, default=0.0, help="sampling temperature (default 0)")
    g.add_argument("--api-key-env", default="SMART_API_KEY", help="environment variable holding the API key")
    g.add_argument("--n-hypotheses", type=int, default=5, help="hypotheses to request (default 5)")
    g.add_argument("--n-refine", type=int, default=0, help="self-critique rounds in the feasibility check")
    g.add_argument("--no-feasibility", action="store_true", help="skip the feasibility check")
    g.add_argument("--max-adjust", type=int, default=3, help="attempts to repair an invalid predicate (default 3)")
    g = p.add_argument_group("procedure")
    g.add_argument("--nsf", action="store_true", help="ablation: skip falsification, rank by provider order")
    g.add_argument("--data-driven-ops", action="store_true",
                   help="operationalize with data-driven splits fitted on an exploration split")
    g.add_argument("--explore-fraction", type=float, default=0.5,
                   help="rows used to fit splits with --data-driven-ops (default 0.5)")
    g.add_argument("--top-n", type=int, default=20, help="results kept after ranking (default 20)")
    g.add_argument("--jobs", type=int, default=1, help="parallel test workers (default 1)")
    _add_test_args(p)
    _add_split_args(p)
    g = p.add_argument_group("output")
    g.add_argument("--out-dir", metavar="DIR", help="write report.md, report.jsonl and transcript.log here")
    g.add_argument("--summarize", action="store_true", help="ask the provider for a recommendations section")
    g.add_argument("--strict", action="store_true", help="exit 5 when no slice could be tested")

    p = sub.add_parser("split", help="find the data-driven slice with the largest accuracy gap")
    _add_data_args(p)
    p.add_argument("--features", required=True, metavar="A,B", help="comma-separated feature columns")
    _add_split_args(p)
    p.add_argument("--seed", type=int, default=0, help="seed for --fit-logistic (default 0)")

    p = sub.add_parser("baseline", help="data-only slice search (exhaustive or beam)")
    _add_data_args(p)
    p.add_argument("--order", type=int, default=2, help="maximum conditions per slice (default 2)")
    p.add_argument("--bins", type=int, default=10, help="quantile bins for numeric features (default 10)")
    p.add_argument("--beam-width", type=int, default=None, help="use beam search with this width")
    p.add_argument("--top-k", type=int, default=20, help="slices reported (default 20)")
    p.add_argument("--out", metavar="PATH", help="write ranked results as JSON lines")
    _add_test_args(p)
    p.set_defaults(correction="none")

    p = sub.add_parser("simulate", help="run a synthetic experiment")
    p.add_argument("--experiment", choices=("fnr", "bias", "fp", "scenarios"), required=True)
    p.add_argument("--runs", type=int, default=20, help="runs per setting (default 20)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", metavar="PATH", help="write the results table as JSON lines")
    p.add_argument("--n-rows", type=int, default=None, help="rows generated per run")
    p.add_argument("--n-corrupted", type=int, nargs="+", default=[1, 2, 3], help="fnr: corrupted subgroups")
    p.add_argument("--tau", type=float, nargs="+", default=[0.0, 0.05, 0.2], help="bias: corruption ratios")
    p.add_argument("--seeds", type=int, default=5, help="bias: seeds (default 5)")
    p.add_argument("--k", type=int, nargs="+", default=[4, 8], help="fp: irrelevant feature counts")

    p = sub.add_parser("metrics", help="descriptive metrics for given slices")
    _add_data_args(p)
    p.add_argument("--query", action="append", required=True, metavar="PREDICATE", help="slice predicate (repeatable)")
    p.add_argument("--conventional-or", action="store_true", help="also report conventional odds ratios")
    p.add_argument("--seed", type=int, default=0, help="seed for --fit-logistic (default 0)")

    p = sub.add_parser("report", help="re-render a markdown report from a machine report")
    p.add_argument("--machine", required=True, metavar="PATH", help="report.jsonl written by audit")
    p.add_argument("--out-dir", metavar="DIR", help="write report.md here instead of stdout")
    return parser


# -- shared helpers ----------------------------------------------------------

def _load_model_data(args):
    """Return (dataset, predictions) for the audit part of the data."""
    if not (args.pred_col or args.pred_file or args.fit_logistic):
        raise ConfigError("a predictions source is required: --pred-col, --pred-file or --fit-logistic")
    data = load_csv(args.data, target=args.target)
    if args.pred_col:
        if args.pred_col not in data:
            raise DatasetError(f"prediction column {args.pred_col!r} not in {args.data}")
        return data.drop([args.pred_col]), predictions_from_column(data, args.pred_col)
    if args.pred_file:
        return data, load_predictions(args.pred_file, data.n_rows)
    if not 0.0 < args.fit_fraction < 1.0:
        raise ConfigError("--fit-fraction must lie in (0, 1)")
    seed = getattr(args, "seed", 0)
    train_idx, audit_idx = split_indices(data.n_rows, args.fit_fraction, seed)
    model = fit_logistic(data.take(train_idx), seed=seed)
    audit_data = data.take(audit_idx)
    return audit_data, predict(model, audit_data)


def _test_config(args, top_n: int = 20) -> TestConfig:
    return TestConfig(alpha=args.alpha, correction=args.correction, bootstrap_B=args.bootstrap_b,
                      top_n=top_n, min_slice_size=args.min_slice, seed=args.seed)


def _split_constraints(args) -> SplitConstraints:
    return SplitConstraints(args.min_group, args.max_group, args.depth)


def _make_provider(args, transport=None):
    if args.provider == "file":
        if not args.hypotheses:
            raise ConfigError("--provider file requires --hypotheses PATH")
        return FileProvider.from_file(args.hypotheses)
    if args.provider == "scripted":
        if not args.fixtures:
            raise ConfigError("--provider scripted requires --fixtures PATH")
        return ScriptedProvider.from_file(args.fixtures)
    if not args.endpoint or not args.model:
        raise ConfigError("--provider remote requires --endpoint and --model")
    if not os.environ.get(args.api_key_env):
        raise ConfigError(f"--provider remote requires the {args.api_key_env} environment variable")
    cfg = RemoteConfig(args.endpoint, args.model, api_key_env=args.api_key_env, temperature=args.temperature)
    return RemoteProvider(config=cfg, transport=transport)


# -- commands ----------------------------------------------------------------

def cmd_audit(args, out, transport=None) -> int:
    context = args.context
    if args.context_file:
        context = Path(args.context_file).read_text(encoding="utf-8")
    # validate everything cheap before any provider call
    config = AuditConfig(
        task_prose=args.task,
        external_context=context,
        requirements=args.requirements,
        n_hypotheses=args.n_hypotheses,
        feasibility=not args.no_feasibility,
        n_refine=args.n_refine,
        data_driven_ops=args.data_driven_ops,
        nsf=args.nsf,
        explore_fraction=args.explore_fraction,
        max_adjust_iters=args.max_adjust,
        split=_split_constraints(args),
        test=_test_config(args, args.top_n),
        n_jobs=args.jobs,
        seed=args.seed,
    )
    if not 0.0 < args.explore_fraction < 1.0:
        raise ConfigError("--explore-fraction must lie in (0, 1)")
    data, preds = _load_model_data(args)
    provider = _make_provider(args, transport)
    result = audit(data, preds, provider, config)
    report = build_report(result)
    if args.summarize:
        report = summarize_with_provider(report, provider)
    if args.out_dir:
        paths = write_report_files(report, args.out_dir, result.transcript or None)
        for kind, path in paths.items():
            print(f"{kind}: {path}", file=out)
    else:
        out.write(render_markdown(report))
    if args.strict and not result.tested and not (args.nsf and result.results):
        return EXIT_STRICT
    return EXIT_OK


def cmd_split(args, out) -> int:
    data, preds = _load_model_data(args)
    features = [f.strip() for f in args.features.split(",") if f.strip()]
    for f in features:
        if f not in data or f == args.target:
            raise ConfigError(f"--features: unknown feature column {f!r}")
    correct = (data.labels() == preds.values).astype(int)
    res = best_split(data, correct, features, _split_constraints(args), args.max_subset)
    print(json.dumps({"predicate": render(res.predicate), "gap": res.gap, "group_size": res.group_size}),
          file=out)
    return EXIT_OK


def cmd_baseline(args, out) -> int:
    data, preds = _load_model_data(args)
    cfg = BaselineConfig(
        max_order=args.order, numeric_bins=args.bins, beam_width=args.beam_width or 20,
        top_k=args.top_k, alpha=args.alpha, correction=args.correction,
        min_slice_size=args.min_slice, bootstrap_B=args.bootstrap_b, seed=args.seed,
    )
    search = beam_search if args.beam_width else exhaustive_search
    res = search(data, data.labels(), preds, cfg)
    top = res.top(cfg.top_k)
    print(f"candidates: {res.n_candidates}  tested: {res.m}  significant: {len(res.top())}", file=out)
    for r in top:
        print(f"{r.delta_acc:.3f}  p={r.p_value:.3f}  n={r.group_size}  {r.predicate}", file=out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in res.ranked:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    from dataclasses import replace

    from . import synth

    rows = []
    if args.experiment == "fnr":
        cfg = synth.SynthConfig(seed=args.seed)
        if args.n_rows:
            cfg = replace(cfg, n_rows=args.n_rows)
        for n in args.n_corrupted:
            r = synth.run_fnr_experiment(n, args.runs, cfg)
            rows.append({"experiment": "fnr", "n_corrupted": n, "smart_fnr": r.smart.mean,
                         "smart_sd": r.smart.sd, "baseline_fnr": r.baseline.mean, "baseline_sd": r.baseline.sd,
                         "match_rule": "slice references the corrupted covariate value"})
    elif args.experiment == "bias":
        cfg = synth.SynthConfig(n_rows=args.n_rows or 100_000, seed=args.seed)
        for c in synth.run_bias_experiment(args.tau, args.runs, cfg, n_seeds=args.seeds):
            rows.append({"experiment": "bias", "tau": c.tau, "corrupted": c.corrupted,
                         "p_white": c.p_white.mean, "p_white_sd": c.p_white.sd,
                         "p_black": c.p_black.mean, "p_black_sd": c.p_black.sd})
    elif args.experiment == "fp":
        cfg = synth.SynthConfig(seed=args.seed)
        if args.n_rows:
            cfg = replace(cfg, n_rows=args.n_rows)
        for k in args.k:
            r = synth.run_irrelevant_experiment(k, args.runs, cfg)
            rows.append({"experiment": "fp", "k": k, "smart_fraction": r.smart.mean, "smart_sd": r.smart.sd,
                         "baseline_fraction": r.baseline.mean, "baseline_sd": r.baseline.sd})
    else:
        for kind in synth.SCENARIOS:
            r = synth.run_scenario_experiment(kind, args.runs, args.n_rows or 2000, args.seed)
            rows.append({"experiment": "scenarios", "scenario": kind,
                         "smart_slices_mean": sum(r.smart_slices) / len(r.smart_slices),
                         "baseline_slices_mean": sum(min(b, 20) for b in r.baseline_significant) / len(r.smart_slices),
                         "baseline_runs_with_slices": sum(b > 0 for b in r.baseline_significant),
                         "runs": args.runs})
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    out.write(text)
    return EXIT_OK


def cmd_metrics(args, out) -> int:
    data, preds = _load_model_data(args)
    features = data.drop([args.target])
    labels = data.labels()
    for q in args.query:
        sl = eval_predicate(parse_predicate(q, features), features)
        m = slice_metrics(sl, features, labels, preds, conventional_or=args.conventional_or)
        print(json.dumps({"predicate": render(sl.predicate), **asdict(m)}, sort_keys=True), file=out)
    return EXIT_OK


def cmd_report(args, out) -> int:
    report = read_machine_report(args.machine)
    text = render_markdown(report)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(args.out_dir) / "report.md"
        path.write_text(text, encoding="utf-8")
        print(f"markdown: {path}", file=out)
    else:
        out.write(text)
    return EXIT_OK


COMMANDS = {
    "audit": cmd_audit,
    "split": cmd_split,
    "baseline": cmd_baseline,
    "simulate": cmd_simulate,
    "metrics": cmd_metrics,
    "report": cmd_report,
}


def _qualified(exc: BaseException) -> str:
    module = type(exc).__module__.rsplit(".", 1)[-1]
    return f"{module}: {exc}"


def main(argv=None, out=None, transport=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "audit":
            return cmd_audit(args, out, transport)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProviderError, ParseFailure, RemoteError) as exc:
        print(_qualified(exc), file=sys.stderr)
        return EXIT_PROVIDER
    except (DatasetError, PredicateError, NoValidSplit, CandidateExplosion, FileNotFoundError) as exc:
        print(_qualified(exc), file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining validation failures come from configuration values
        print(_qualified(exc), file=sys.stderr)
        return EXIT_CONFIG


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
