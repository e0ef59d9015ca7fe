"""Hypothesis sourcing: providers, prompt construction, response parsing,
the feasibility gate and repair of predicates that select nothing."""

from __future__ import annotations

import ast as pyast
import hashlib
import json
import logging
import os
import re
import warnings
from dataclasses import dataclass, field, replace

from .dataset import DataContext, Dataset, describe
from .predicate import PredicateError, eval_predicate, parse_predicate

log = logging.getLogger(__name__)

HYPOTHESIS_FORMAT = "Format of the output: Hypothesis: <>; Justification: <>."
OPERATIONALIZATION_FORMAT = "Use this format: Hypothesis: <>; Operationalization: <>."

DEFAULT_SYSTEM_MESSAGE = (
    "You are an expert in auditing machine learning models on tabular data. "
    "Answer precisely and follow the requested output format."
)


class ProviderError(RuntimeError):
    pass


class ProviderUnsupported(ProviderError):
    """The provider kind cannot answer free-form prompts."""


class ParseFailure(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class AdjustmentFailure(RuntimeError):
    def __init__(self, message: str, last_candidate: str):
        super().__init__(message)
        self.last_candidate = last_candidate


@dataclass(frozen=True)
class Hypothesis:
    id: int
    text: str
    justification: str = ""
    operationalization: str | None = None
    source: str = "scripted"

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("hypothesis text must be non-empty")


@dataclass(frozen=True)
class PromptBundle:
    data_context: DataContext
    n_hypotheses: int = 5
    external_context: str = ""
    requirements: str = ""

    def __post_init__(self):
        if self.n_hypotheses < 1:
            raise ValueError("n_hypotheses must be >= 1")


# -- providers ---------------------------------------------------------------

@dataclass
class HypothesisProvider:
    """Base provider. Subclasses answer prompts via :meth:`_respond`."""

    kind = "abstract"
    transcript: list = field(default_factory=list, init=False, repr=False)

    def complete(self, prompt: str, system: str | None = None) -> str:
        system = system or DEFAULT_SYSTEM_MESSAGE
        response = self._respond(prompt, system)
        self.transcript.append({"system": system, "prompt": prompt, "response": response})
        return response

    def _respond(self, prompt: str, system: str) -> str:
        raise NotImplementedError

    def transcript_digest(self) -> str:
        blob = json.dumps(self.transcript, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def transcript_text(self) -> str:
        parts = []
        for i, turn in enumerate(self.transcript):
            parts.append(f"=== call {i} ===\n--- prompt ---\n{turn['prompt']}\n--- response ---\n{turn['response']}\n")
        return "\n".join(parts)


@dataclass
class ScriptedProvider(HypothesisProvider):
    """Replays a fixed list of responses, one per call, in order."""

    responses: list = field(default_factory=list)
    kind = "scripted"

    def __post_init__(self):
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedProvider":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list) or not all(isinstance(r, str) for r in data):
            raise ProviderError(f"{path}: scripted fixture must be a JSON list of strings")
        return cls(list(data))

    @property
    def calls(self) -> int:
        return self._cursor

    def _respond(self, prompt: str, system: str) -> str:
        if self._cursor >= len(self.responses):
            raise ProviderError(f"scripted provider exhausted after {len(self.responses)} responses")
        response = self.responses[self._cursor]
        self._cursor += 1
        return response


@dataclass
class FileProvider(HypothesisProvider):
    """Hypotheses read from records; cannot answer prompts."""

    records: list = field(default_factory=list)
    kind = "file"

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "FileProvider":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        stripped = text.lstrip()
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
        for i, rec in enumerate(records):
            if not isinstance(rec, dict) or not str(rec.get("text", "")).strip():
                raise ProviderError(f"{path}: record {i} lacks a non-empty 'text' field")
        return cls(records)

    def hypotheses(self) -> list[Hypothesis]:
        return [
            Hypothesis(
                i, rec["text"], rec.get("justification", ""), rec.get("operationalization"), "file"
            )
            for i, rec in enumerate(self.records)
        ]

    def _respond(self, prompt: str, system: str) -> str:
        raise ProviderUnsupported("file provider cannot answer free-form prompts")


@dataclass
class RemoteProvider(HypothesisProvider):
    """Chat-completion endpoint; see :mod:`smart_testing.remote`."""

    config: object = None
    transport: object = None
    kind = "remote"

    def _respond(self, prompt: str, system: str) -> str:
        from .remote import RemoteError, chat_complete

        try:
            return chat_complete(self.config, system, prompt, transport=self.transport)
        except RemoteError as exc:
            raise ProviderError(str(exc)) from exc


# -- prompts -----------------------------------------------------------------

def build_generation_prompt(bundle: PromptBundle) -> str:
    n = bundle.n_hypotheses
    parts = [
        "Your task is to propose hypotheses about which subgroups within the dataset the model "
        "has worse predictive performance on than on average, for example because of societal "
        "bias in the data, insufficient data for some groups, or other relationships. A subgroup "
        "may be defined by any of the provided characteristics or a combination of them."
    ]
    if bundle.external_context.strip():
        parts.append(f"Context: {bundle.external_context.strip()}")
    parts.append(f"Dataset information: {bundle.data_context.render()}")
    if bundle.requirements.strip():
        parts.append(f"Requirements: {bundle.requirements.strip()}")
    parts.append(
        f"Task: Create {n} hypotheses as to which subgroups within the dataset the model will "
        "perform worse than on average. Each hypothesis may use one or two variables in its "
        "condition. The goal is to find discrepancies in the model's performance, not in the "
        f"underlying outcomes. Justify each of the {n} hypotheses. {HYPOTHESIS_FORMAT}"
    )
    return "\n\n".join(parts) + "\n"


def _hypothesis_listing(hypotheses: list[Hypothesis]) -> str:
    lines = []
    for i, h in enumerate(hypotheses, 1):
        lines.append(f"Hypothesis {i}: {h.text}")
        if h.justification:
            lines.append(f"Justification: {h.justification}")
        lines.append("")
    return "\n".join(lines).rstrip()


def build_operationalization_prompt(hypotheses: list[Hypothesis], context: DataContext) -> str:
    if not hypotheses:
        raise ValueError("need at least one hypothesis")
    info = context.description_text.strip()
    return (
        "The following are hypotheses about which people within a dataset the model might "
        "underperform on.\n"
        f"Propose specific ranges for each hypothesis. Hypotheses:\n{_hypothesis_listing(hypotheses)}\n\n"
        + (f"Dataset information: {info}\n\n" if info else "")
        + f"{context.inventory_text()}\n\n"
        "TASK: Propose specific variable ranges for each hypothesis such that they are clearly "
        "operationalizable. Write each operationalization as a query over the column names using "
        'comparisons (==, !=, <, <=, >, >=), membership (column in ["a", "b"]) and the keywords '
        "and/or, with string values in double quotes. "
        f"{OPERATIONALIZATION_FORMAT}\n"
    )


# -- response parsing --------------------------------------------------------

_LABEL_RE = re.compile(
    r"(?im)(?:^|;)[ \t]*(?:[-*#>]+[ \t]*)?(?:\*\*)?"
    r"(hypothesis|justification|operationalization)(?:[ \t]*#?(\d+))?(?:\*\*)?[ \t]*:(?:\*\*)?"
)


def _labelled_fields(response: str) -> list[tuple[str, int | None, str]]:
    matches = list(_LABEL_RE.finditer(response))
    out = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(response)
        value = response[m.end():end].strip().rstrip(";").strip()
        number = int(m.group(2)) if m.group(2) else None
        out.append((m.group(1).lower(), number, value))
    return out


def _records(response: str, second: str) -> list[tuple[str, str | None]]:
    """Group labelled fields into (hypothesis, <second field>) records in document order."""
    records: list[list] = []
    for label, _, value in _labelled_fields(response):
        if label == "hypothesis":
            records.append([value, None])
        elif label == second and records and records[-1][1] is None:
            records[-1][1] = value
    return [(h, s) for h, s in records]


def parse_hypothesis_response(response: str, expected_n: int) -> list[Hypothesis]:
    """Extract ``Hypothesis:``/``Justification:`` pairs; malformed entries are skipped."""
    out = []
    for text, justification in _records(response, "justification"):
        if not text or not justification:
            warnings.warn(f"skipping malformed hypothesis entry: {text[:60]!r}", stacklevel=2)
            continue
        out.append(Hypothesis(len(out), " ".join(text.split()), " ".join(justification.split())))
        if len(out) == expected_n:
            break
    if not out:
        raise ParseFailure("no Hypothesis/Justification pairs found in response", response)
    return out


def normalize_query(text: str) -> str:
    """Strip wrapping quotes/backticks and map ``&&``/``||`` onto ``and``/``or``."""
    q = text.strip()
    fence = re.fullmatch(r"```(?:\w+)?\s*(.*?)\s*```", q, flags=re.S)
    if fence:
        q = fence.group(1)
    q = q.strip().strip("`").strip()
    if len(q) >= 2 and q[0] == q[-1] == "'":
        q = q[1:-1]
    q = q.rstrip(".;").strip()
    q = re.sub(r"\s*&&\s*", " and ", q)
    q = re.sub(r"\s*\|\|\s*", " or ", q)
    return q


def _candidate_queries(text: str) -> list[str]:
    """Candidate predicate strings from a free-text operationalization."""
    cands = [text]
    cands.extend(re.findall(r"`([^`]+)`", text))
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines:
        cands.append(lines[-1])
    return [normalize_query(c) for c in cands if c.strip()]


@dataclass
class ParsedOperationalizations:
    queries: dict  # index -> valid predicate text
    invalid: dict  # index -> (candidate text, reason); to be routed through adjust_query

    def all_indices(self) -> list[int]:
        return sorted(set(self.queries) | set(self.invalid))


def _map_entries(response: str) -> dict[int, str] | None:
    m = re.search(r"\{.*\}", response, flags=re.S)
    if not m:
        return None
    blob = m.group()
    try:
        data = pyast.literal_eval(blob)
    except (ValueError, SyntaxError):
        data = {
            int(k): pyast.literal_eval(v)
            for k, v in re.findall(r"(\d+)\s*:\s*('(?:[^'\\]|\\.)*'|\"(?:[^\"\\]|\\.)*\")", blob)
        }
    if not isinstance(data, dict) or not data:
        return None
    out = {}
    for k, v in data.items():
        if isinstance(v, (list, tuple)):
            v = " and ".join(f"({normalize_query(str(x))})" for x in v)
        out[int(k)] = str(v)
    return out


def parse_operationalization_response(response: str, schema) -> ParsedOperationalizations:
    """Accept either an index->query map or ``Hypothesis:``/``Operationalization:`` prose."""
    entries = _map_entries(response)
    if entries is None:
        pairs = _records(response, "operationalization")
        entries = {i: op for i, (_, op) in enumerate(pairs) if op}
    if not entries:
        raise ParseFailure("no operationalizations found in response", response)

    parsed = ParsedOperationalizations({}, {})
    for idx, raw in sorted(entries.items()):
        reason = None
        for cand in _candidate_queries(raw):
            try:
                parse_predicate(cand, schema)
            except PredicateError as exc:
                reason = reason or str(exc)
                continue
            parsed.queries[idx] = cand
            break
        else:
            parsed.invalid[idx] = (normalize_query(raw), reason or "unparsable")
    return parsed


# -- feasibility gate --------------------------------------------------------

_YES_NO = re.compile(r"\b(yes|no)\b", re.I)


def interpret_yes_no(reply: str) -> bool | None:
    m = _YES_NO.search(reply)
    if not m:
        return None
    return m.group(1).lower() == "yes"


def feasibility_check(
    context: DataContext,
    task_prose: str,
    provider: HypothesisProvider,
    n_refine: int = 0,
) -> bool:
    """Ask whether any covariate could plausibly relate to the outcome.

    ``n_refine`` critique-and-revise rounds follow the first answer; a final prompt
    converts the analysis to yes/no. Replies that map to neither count as feasible.
    """
    if n_refine < 0:
        raise ValueError("n_refine must be >= 0")
    columns = ", ".join(context.column_names)
    task = (
        "Evaluate subgroups for model performance. Decide whether any relationship could "
        "plausibly exist between the covariates and the outcome, so that subgroups defined by "
        "these covariates are worth testing for model failures.\n"
        f"Context: {context.description_text.strip()}\n"
        f"Target: {task_prose.strip()}\n"
        f"Columns: {columns}\n"
    )
    analysis = provider.complete(task)
    for _ in range(n_refine):
        analysis = provider.complete(
            "Critically review the following analysis. Initial answers tend to be over-optimistic "
            "about indirect or proxy relationships; point out weak reasoning and give a revised "
            "analysis.\n"
            f"Context: {context.description_text.strip()}\nTarget: {task_prose.strip()}\n"
            f"Columns: {columns}\nAnalysis: {analysis}\n"
        )
    reply = provider.complete(
        "Based on the analysis, provide a yes/no answer: could any relationship exist between "
        "the covariates and the outcome that warrants testing subgroups? Answer yes or no.\n"
        f"Analysis: {analysis}\n"
    )
    verdict = interpret_yes_no(reply)
    if verdict is None:
        warnings.warn(f"could not map feasibility reply to yes/no, assuming feasible: {reply[:80]!r}",
                      stacklevel=2)
        return True
    return verdict


# -- query adjustment --------------------------------------------------------

def _query_problem(text: str, dataset: Dataset) -> str | None:
    try:
        ast = parse_predicate(text, dataset)
    except PredicateError as exc:
        return str(exc)
    if len(eval_predicate(ast, dataset)) == 0:
        return "condition yields no rows"
    return None


def _extract_adjusted(reply: str) -> str:
    fields = _labelled_fields(reply)
    for label, _, value in fields:
        if label == "operationalization":
            reply = value
            break
    m = re.search(r"(?im)^\s*(?:condition|query)\s*:\s*(.+)$", reply)
    if m:
        reply = m.group(1)
    for cand in _candidate_queries(reply):
        if cand:
            return cand
    return normalize_query(reply)


def adjust_query(
    predicate_text: str,
    dataset: Dataset,
    provider: HypothesisProvider,
    max_iters: int = 3,
    hypothesis_text: str = "",
) -> str:
    """Return ``predicate_text`` if it selects rows, else re-prompt until one does."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    candidate = normalize_query(predicate_text)
    problem = _query_problem(candidate, dataset)
    if problem is None:
        return candidate
    inventory = describe(dataset).inventory_text()
    for attempt in range(max_iters):
        log.debug("adjusting %r (%s), attempt %d", candidate, problem, attempt + 1)
        prompt = (
            f"The condition `{candidate}` cannot be applied to the dataset: {problem}.\n"
            + (f"It operationalizes the hypothesis: {hypothesis_text}\n" if hypothesis_text else "")
            + f"{inventory}\n\n"
            "Propose an adjusted condition that uses only these columns and values and selects "
            "at least one row. Reply with the condition only, in the form Condition: <>."
        )
        try:
            reply = provider.complete(prompt)
        except ProviderUnsupported as exc:
            raise AdjustmentFailure(f"cannot adjust {candidate!r}: {exc}", candidate) from exc
        candidate = _extract_adjusted(reply)
        problem = _query_problem(candidate, dataset)
        if problem is None:
            return candidate
    raise AdjustmentFailure(
        f"no valid non-empty condition after {max_iters} adjustment attempts ({problem})", candidate
    )


def with_operationalization(h: Hypothesis, query: str | None) -> Hypothesis:
    return replace(h, operationalization=query)
