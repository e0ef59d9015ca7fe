"""Audit reports: a markdown document for people and a JSON-lines file for machines.

The markdown tables round numbers at render time only. The machine file keeps full
precision and can be read back with :func:`parse_machine`.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

from .falsify import SliceTestResult, UntestedResult
from .hypothesis import HypothesisProvider, ProviderError
from .metrics import METRIC_NAMES, SliceMetrics

FORMAT_TAG = "smart-audit/1"
MARKDOWN_NAME = "report.md"
MACHINE_NAME = "report.jsonl"
TRANSCRIPT_NAME = "transcript.log"

SUMMARY_PROMPT = (
    "Below are the results of testing hypotheses about where a machine learning model fails. "
    "Summarize the supported failure modes in plain language and give concrete recommendations "
    "for improving or monitoring the model. Begin your answer with 'Recommendations:'.\n\n"
)


@dataclass(frozen=True)
class ReportRow:
    hypothesis_id: int
    hypothesis: str
    justification: str
    operationalization: str
    evidence: str
    result: SliceTestResult | None = None
    rank: int = 0

    @property
    def p_value(self):
        return None if self.result is None else self.result.p_value

    @property
    def delta_acc(self):
        return None if self.result is None else self.result.delta_acc


@dataclass(frozen=True)
class AuditReport:
    run_config: dict
    rows: tuple[ReportRow, ...]
    metrics: dict  # hypothesis_id -> SliceMetrics
    untestable: tuple[tuple[int, str, str], ...] = ()
    feasible: bool = True
    ablation: bool = False
    n_rows: int = 0
    transcript_digest: str = ""
    notes: tuple[str, ...] = ()
    summary: str | None = None
    warnings: tuple[str, ...] = ()
    timestamp: str | None = None

    @property
    def run_id(self) -> str:
        blob = json.dumps(
            {"config": self.run_config, "rows": [_row_record(r, self.metrics) for r in self.rows],
             "digest": self.transcript_digest},
            sort_keys=True, ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @property
    def results(self) -> list[SliceTestResult]:
        return [r.result for r in self.rows if r.result is not None]


def build_report(audit_result, run_config: dict | None = None) -> AuditReport:
    """Assemble a report from a :class:`~smart_testing.pipeline.AuditResult`."""
    rows = []
    for rank, res in enumerate(audit_result.results):
        h = audit_result.hypothesis(res.hypothesis_id)
        tested = res if isinstance(res, SliceTestResult) else None
        rows.append(ReportRow(h.id, h.text, h.justification, res.predicate, res.evidence, tested, rank))
    untestable = tuple((h.id, h.text, reason) for h, reason in audit_result.untestable)
    cfg = run_config if run_config is not None else audit_result.config.snapshot()
    return AuditReport(
        run_config=cfg,
        rows=tuple(rows),
        metrics=dict(audit_result.metrics),
        untestable=untestable,
        feasible=audit_result.feasible,
        ablation=audit_result.config.nsf,
        n_rows=audit_result.n_rows,
        transcript_digest=audit_result.transcript_digest,
        notes=tuple(audit_result.notes),
    )


# -- rendering ---------------------------------------------------------------

def fmt_p(p) -> str:
    if p is None:
        return "NA"
    return f"{p:.3f}"


def fmt_num(x, digits: int = 2) -> str:
    if x is None:
        return "NA"
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return f"{x:.{digits}f}"


def _cell(text: str) -> str:
    return " ".join(str(text).split()).replace("|", "\\|")


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


_METRIC_SPLIT = (METRIC_NAMES[:6], METRIC_NAMES[6:])
_METRIC_DIGITS = {"p_value_bootstrap": 3}


def render_tables(report: AuditReport) -> str:
    """Hypothesis and metric tables; the part a summary is computed from."""
    lines = ["## Hypotheses", ""]
    if not report.rows:
        lines.append("No hypotheses were tested.")
    else:
        header = ["Hypothesis", "Justification", "Operationalization"]
        header += ["Rank", "Evidence"] if report.ablation else ["p-value", "\\|ΔAcc\\|", "Evidence"]
        body = []
        for row in report.rows:
            cells = [_cell(row.hypothesis), _cell(row.justification), f"`{_cell(row.operationalization)}`"]
            if report.ablation:
                cells += [str(row.rank + 1), row.evidence]
            else:
                cells += [fmt_p(row.p_value), fmt_num(row.delta_acc, 3), row.evidence]
            body.append(cells)
        lines += _table(header, body)

    with_metrics = [r for r in report.rows if r.hypothesis_id in report.metrics]
    if with_metrics:
        lines += ["", "## Slice metrics", ""]
        for names in _METRIC_SPLIT:
            body = []
            for row in with_metrics:
                m = report.metrics[row.hypothesis_id]
                body.append([f"H{row.hypothesis_id}"] + [
                    fmt_num(getattr(m, n), _METRIC_DIGITS.get(n, 2)) for n in names
                ])
            lines += _table(["Hypothesis"] + list(names), body) + [""]
        lines.pop()
    return "\n".join(lines) + "\n"


def render_markdown(report: AuditReport) -> str:
    tested = report.results
    lines = ["# Model audit report", ""]
    if report.timestamp:
        lines += [f"Generated: {report.timestamp}", ""]
    test_cfg = report.run_config.get("test", {}) if isinstance(report.run_config, dict) else {}
    if report.ablation:
        mode = "ablation without falsification (provider order, no p-values)"
    else:
        mode = (f"falsification, correction = {test_cfg.get('correction', 'bonferroni')}, "
                f"alpha = {test_cfg.get('alpha', 0.05)}")
    lines += [
        f"- Run id: `{report.run_id}`",
        f"- Rows audited: {report.n_rows}",
        f"- Mode: {mode}",
        f"- Slices tested: {len(tested)}",
        f"- Supported: {sum(r.significant for r in tested)}",
        f"- Provider transcript digest: `{report.transcript_digest}`",
        "",
    ]
    if not report.feasible:
        lines += [
            "No slices were tested: the feasibility check found no plausible relationship "
            "between the covariates and the outcome.",
            "",
        ]
    lines.append(render_tables(report).rstrip("\n"))
    if report.untestable:
        lines += ["", "## Untestable hypotheses", ""]
        lines += _table(["Hypothesis", "Reason"], [[_cell(t), _cell(r)] for _, t, r in report.untestable])
    if report.notes or report.warnings:
        lines += ["", "## Notes", ""]
        lines += [f"- {_cell(n)}" for n in report.notes + report.warnings]
    if report.summary:
        lines += ["", "## Recommendations", "", report.summary.rstrip("\n")]
    return "\n".join(lines) + "\n"


# -- machine format ----------------------------------------------------------

def _row_record(row: ReportRow, metrics: dict) -> dict:
    m = metrics.get(row.hypothesis_id)
    return {
        "record": "hypothesis",
        "rank": row.rank,
        "hypothesis_id": row.hypothesis_id,
        "hypothesis": row.hypothesis,
        "justification": row.justification,
        "operationalization": row.operationalization,
        "evidence": row.evidence,
        "result": None if row.result is None else row.result.to_dict(),
        "metrics": None if m is None else m.to_dict(),
    }


def render_machine(report: AuditReport) -> str:
    header = {
        "record": "header",
        "format": FORMAT_TAG,
        "run_id": report.run_id,
        "timestamp": report.timestamp,
        "config": report.run_config,
        "feasible": report.feasible,
        "ablation": report.ablation,
        "n_rows": report.n_rows,
        "transcript_digest": report.transcript_digest,
        "notes": list(report.notes),
        "warnings": list(report.warnings),
        "summary": report.summary,
    }
    lines = [header] + [_row_record(r, report.metrics) for r in report.rows]
    lines += [{"record": "untestable", "hypothesis_id": i, "hypothesis": t, "reason": r}
              for i, t, r in report.untestable]
    return "".join(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n" for rec in lines)


class ReportFormatError(ValueError):
    pass


def parse_machine(text: str) -> AuditReport:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not records or records[0].get("record") != "header":
        raise ReportFormatError("machine report must start with a header record")
    head = records[0]
    if head.get("format") != FORMAT_TAG:
        raise ReportFormatError(f"unsupported report format {head.get('format')!r}")
    rows, metrics, untestable = [], {}, []
    for rec in records[1:]:
        if rec["record"] == "hypothesis":
            result = None if rec["result"] is None else SliceTestResult.from_dict(rec["result"])
            rows.append(ReportRow(rec["hypothesis_id"], rec["hypothesis"], rec["justification"],
                                  rec["operationalization"], rec["evidence"], result, rec["rank"]))
            if rec["metrics"] is not None:
                metrics[rec["hypothesis_id"]] = SliceMetrics.from_dict(rec["metrics"])
        elif rec["record"] == "untestable":
            untestable.append((rec["hypothesis_id"], rec["hypothesis"], rec["reason"]))
        else:
            raise ReportFormatError(f"unknown record type {rec['record']!r}")
    return AuditReport(
        run_config=head["config"],
        rows=tuple(rows),
        metrics=metrics,
        untestable=tuple(untestable),
        feasible=head["feasible"],
        ablation=head["ablation"],
        n_rows=head["n_rows"],
        transcript_digest=head["transcript_digest"],
        notes=tuple(head["notes"]),
        summary=head["summary"],
        warnings=tuple(head["warnings"]),
        timestamp=head.get("timestamp"),
    )


def read_machine_report(path: str | os.PathLike) -> AuditReport:
    return parse_machine(Path(path).read_text(encoding="utf-8"))


def write_report(report: AuditReport, format: str = "markdown") -> str:
    if format == "markdown":
        return render_markdown(report)
    if format == "machine":
        return render_machine(report)
    raise ValueError(f"unknown report format {format!r}")


def write_report_files(report: AuditReport, out_dir: str | os.PathLike, transcript: str | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"markdown": out / MARKDOWN_NAME, "machine": out / MACHINE_NAME}
    paths["markdown"].write_text(render_markdown(report), encoding="utf-8")
    paths["machine"].write_text(render_machine(report), encoding="utf-8")
    if transcript:
        paths["transcript"] = out / TRANSCRIPT_NAME
        paths["transcript"].write_text(transcript, encoding="utf-8")
    return paths


def summarize_with_provider(report: AuditReport, provider: HypothesisProvider) -> AuditReport:
    """Return a copy of ``report`` with a provider-written recommendations section.

    On provider failure the copy carries a warning instead; tables are never touched.
    """
    try:
        reply = provider.complete(SUMMARY_PROMPT + render_tables(report))
    except ProviderError as exc:
        msg = f"summary unavailable: {exc}"
        warnings.warn(msg, stacklevel=2)
        return replace(report, warnings=report.warnings + (msg,))
    return replace(report, summary=reply)


__all__ = [
    "AuditReport", "ReportRow", "ReportFormatError", "UntestedResult", "build_report",
    "parse_machine", "read_machine_report", "render_machine", "render_markdown",
    "render_tables", "summarize_with_provider", "write_report", "write_report_files",
]
