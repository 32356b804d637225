"""Agent profiles, task specifications, tools, prompt rendering and output parsing."""

from __future__ import annotations

import enum
import json
import re
import string
from dataclasses import dataclass
from importlib import resources
from typing import Any, Iterable, Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field, StrictBool, ValidationError, model_validator

from .domain import Citation, ThresholdRecord
from .errors import (
    NoStructuredBlock,
    SchemaViolation,
    ToolIoError,
    ToolNotAllowed,
)
from .knowledge import SearchProvider, SearchResult
from .llm.base import ChatExchange, ChatMessage, Role
from .units import Quantity
from .workspace import ARTIFACTS, Workspace

DEFAULT_PUBLISHERS = ("AHDB", "BCPC", "EU-FarmBook")
TASK_HEADER = "TASK-TYPE"
SEARCH_K = 5


class ToolKind(str, enum.Enum):
    JSON_READER = "json_reader"
    MARKDOWN_READER = "markdown_reader"
    SEARCH = "search"


class AgentName(str, enum.Enum):
    EDITOR = "Editor"
    RETRIEVER = "Retriever"
    VALIDATOR = "Validator"


class TaskKind(str, enum.Enum):
    INITIAL_PMA = "initial_pma"
    CUSTOMISATION_PLAN = "customisation_plan"
    KNOWLEDGE_RETRIEVAL = "knowledge_retrieval"
    CUSTOMISED_PMA = "customised_pma"
    VALIDATE_THRESHOLD = "validate_threshold"


STAGE_ORDER = (
    TaskKind.INITIAL_PMA,
    TaskKind.CUSTOMISATION_PLAN,
    TaskKind.KNOWLEDGE_RETRIEVAL,
    TaskKind.CUSTOMISED_PMA,
    TaskKind.VALIDATE_THRESHOLD,
)

TASK_AGENT = {
    TaskKind.INITIAL_PMA: AgentName.EDITOR,
    TaskKind.CUSTOMISED_PMA: AgentName.EDITOR,
    TaskKind.CUSTOMISATION_PLAN: AgentName.RETRIEVER,
    TaskKind.KNOWLEDGE_RETRIEVAL: AgentName.RETRIEVER,
    TaskKind.VALIDATE_THRESHOLD: AgentName.VALIDATOR,
}

TASK_OUTPUT = {
    TaskKind.INITIAL_PMA: "initial_pma.md",
    TaskKind.CUSTOMISATION_PLAN: "custom_plan.json",
    TaskKind.KNOWLEDGE_RETRIEVAL: "retrieved_info.md",
    TaskKind.CUSTOMISED_PMA: "custom_pma.md",
    TaskKind.VALIDATE_THRESHOLD: "validation.json",
}

# Files each task reads through its tools, beyond the placeholders in its text.
TASK_FILE_TOOLS: dict[TaskKind, tuple[tuple[ToolKind, str], ...]] = {
    TaskKind.INITIAL_PMA: (
        (ToolKind.JSON_READER, "query_path"),
        (ToolKind.JSON_READER, "example_path"),
        (ToolKind.MARKDOWN_READER, "example_pma_path"),
    ),
    TaskKind.CUSTOMISATION_PLAN: ((ToolKind.MARKDOWN_READER, "initial_pma_path"),),
    TaskKind.KNOWLEDGE_RETRIEVAL: ((ToolKind.JSON_READER, "custom_plan_path"),),
    TaskKind.CUSTOMISED_PMA: (
        (ToolKind.MARKDOWN_READER, "initial_pma_path"),
        (ToolKind.MARKDOWN_READER, "retrieved_info_path"),
        (ToolKind.JSON_READER, "custom_plan_path"),
    ),
    TaskKind.VALIDATE_THRESHOLD: (
        (ToolKind.MARKDOWN_READER, "custom_pma_path"),
        (ToolKind.JSON_READER, "query_path"),
    ),
}

PLACEHOLDERS = frozenset(ARTIFACTS)

# aspect key -> (plan section name, query pattern, recommended publishers)
ASPECTS: dict[str, tuple[str, str, tuple[str, ...]]] = {
    "pmd": ("Pest Management Decision threshold", "{pest} action threshold {crop} {location}", ("AHDB",)),
    "ipm": ("IPM Strategies", "{pest} integrated pest management {crop}", ("BCPC", "EU-FarmBook")),
    "economics": ("Economic Considerations", "{pest} yield loss control cost {crop}", ("AHDB",)),
    "timing": ("Application Timing", "{pest} treatment timing {crop} {month}", ("AHDB", "BCPC")),
    "monitoring": ("Post-Treatment Monitoring", "{pest} monitoring sampling {crop}", ("AHDB",)),
}
PMD_ASPECTS = ("pmd",)


@dataclass(frozen=True)
class AgentProfile:
    name: AgentName
    profile_text: str
    allowed_tools: frozenset[ToolKind]

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", AgentName(self.name))
        object.__setattr__(self, "allowed_tools", frozenset(ToolKind(t) for t in self.allowed_tools))


_ALL_TOOLS = frozenset(ToolKind)
DEFAULT_PROFILES = {
    AgentName.EDITOR: AgentProfile(
        AgentName.EDITOR,
        "You are an agronomist specialising in crop pest management. You draft pest "
        "management advice for the scenario you are given, first from your own knowledge "
        "and later revised with the evidence gathered by the Retriever.",
        frozenset({ToolKind.JSON_READER, ToolKind.MARKDOWN_READER}),
    ),
    AgentName.RETRIEVER: AgentProfile(
        AgentName.RETRIEVER,
        "You find what the Editor's draft advice is missing. Plan targeted searches of "
        "trusted regional guidance, run them, and report what you found with citations.",
        _ALL_TOOLS,
    ),
    AgentName.VALIDATOR: AgentProfile(
        AgentName.VALIDATOR,
        "You audit finished pest management advice. Check that the action decision follows "
        "from the reported infestation level and the published action threshold, using "
        "search to confirm the threshold, and correct the decision when it does not.",
        _ALL_TOOLS,
    ),
}


def load_template(kind: TaskKind | str) -> str:
    kind = TaskKind(kind)
    return (resources.files("pest_advisor") / "data" / "templates" / f"{kind.value}.txt").read_text(
        encoding="utf-8"
    )


def template_placeholders(text: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(text) if name}


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    agent: AgentName
    template_text: str
    output_artifact: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TaskKind(self.kind))
        object.__setattr__(self, "agent", AgentName(self.agent))
        if TASK_AGENT[self.kind] is not self.agent:
            raise ValueError(
                f"task {self.kind.value} belongs to {TASK_AGENT[self.kind].value}, not {self.agent.value}"
            )
        unknown = template_placeholders(self.template_text) - PLACEHOLDERS
        if unknown:
            raise ValueError(f"unknown placeholders in template: {sorted(unknown)}")

    @classmethod
    def default(cls, kind: TaskKind | str, template_text: str | None = None) -> TaskSpec:
        kind = TaskKind(kind)
        return cls(kind, TASK_AGENT[kind], template_text or load_template(kind), TASK_OUTPUT[kind])

    def required_placeholders(self) -> list[str]:
        """Placeholders whose files must exist, in a fixed reporting order."""
        needed = template_placeholders(self.template_text) | {ph for _, ph in TASK_FILE_TOOLS[self.kind]}
        return [ph for ph in ARTIFACTS if ph in needed]


def default_tasks() -> dict[TaskKind, TaskSpec]:
    return {kind: TaskSpec.default(kind) for kind in STAGE_ORDER}


# --- tools ------------------------------------------------------------------


def format_search_results(query: str, results: Sequence[SearchResult]) -> str:
    lines = [f"Search results for: {query}"]
    if not results:
        lines.append("(no results)")
    for rank, r in enumerate(results, 1):
        lines.append(f"[{rank}] {r.publisher} | {r.title}")
        lines.append(f"    doc: {r.doc_id} | score: {r.score:.6f}")
        lines.append(f"    url: {r.url}")
        lines.append(f"    snippet: {' '.join(r.snippet.split())}")
        for t in r.thresholds:
            lines.append("    threshold: " + json.dumps(t.to_json(), sort_keys=True, ensure_ascii=False))
    return "\n".join(lines)


_RESULT_HEAD = re.compile(r"^\[(\d+)\] (?P<pub>.*?) \| (?P<title>.*)$")


def parse_search_results(text: str) -> list[dict[str, Any]]:
    """Inverse of :func:`format_search_results`; thresholds come back as records."""
    results: list[dict[str, Any]] = []
    for line in text.splitlines():
        head = _RESULT_HEAD.match(line)
        if head:
            results.append({"publisher": head["pub"], "title": head["title"], "thresholds": []})
            continue
        if not results:
            continue
        body = line.strip()
        key, _, value = body.partition(": ")
        if key == "doc":
            results[-1]["doc_id"] = value.split(" | ")[0].strip()
        elif key in ("url", "snippet"):
            results[-1][key] = value
        elif key == "threshold":
            results[-1]["thresholds"].append(ThresholdRecord.from_json(json.loads(value)))
    return results


def run_tool(
    kind: ToolKind | str,
    args: dict[str, Any],
    *,
    agent: AgentProfile,
    search: SearchProvider | None = None,
) -> str:
    kind = ToolKind(kind)
    if kind not in agent.allowed_tools:
        raise ToolNotAllowed(agent.name.value, kind.value)
    if kind is ToolKind.SEARCH:
        if search is None:
            raise ToolIoError("no search provider configured")
        query = str(args["query"])
        return format_search_results(query, search.search(query, int(args.get("k", SEARCH_K))))
    path = args["path"]
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ToolIoError(f"cannot read {path}: {exc}") from exc
    if kind is ToolKind.JSON_READER:
        try:
            return json.dumps(json.loads(text), indent=2, ensure_ascii=False)
        except json.JSONDecodeError as exc:
            raise ToolIoError(f"{path} is not valid JSON: {exc}") from exc
    return text


def tool_header(kind: ToolKind, label: str) -> str:
    return f"TOOL {kind.value} {label}"


def tool_messages(exchange: ChatExchange) -> list[tuple[str, str, str]]:
    """(tool kind, label, content) for each inlined tool output."""
    out = []
    for m in exchange.messages:
        if m.role is Role.TOOL:
            head, _, content = m.content.partition("\n")
            _, kind, label = (head.split(" ", 2) + ["", ""])[:3]
            out.append((kind, label, content))
    return out


# --- prompt rendering --------------------------------------------------------


def plan_queries(plan_json: dict[str, Any]) -> list[str]:
    queries = []
    for section in plan_json.get("sections", []):
        for q in section.get("search_queries", []):
            if q not in queries:
                queries.append(q)
    return queries


def validation_query(scenario_json: dict[str, Any]) -> str:
    return f"{scenario_json.get('Pest', '')} threshold {scenario_json.get('CropName', '')}".strip()


def render_prompt(
    task: TaskSpec,
    workspace: Workspace,
    *,
    search: SearchProvider | None = None,
    profile: AgentProfile | None = None,
    aspects: Sequence[str] = PMD_ASPECTS,
    search_k: int = SEARCH_K,
    temperature: float = 0.0,
    max_output: int = 4096,
) -> ChatExchange:
    profile = profile or DEFAULT_PROFILES[task.agent]
    if profile.name is not task.agent:
        raise ValueError(f"profile {profile.name.value} does not match task agent {task.agent.value}")
    for ph in task.required_placeholders():
        workspace.require(ph)

    user = f"{TASK_HEADER}: {task.kind.value}\n\n" + task.template_text.format(**workspace.paths())
    if task.kind is TaskKind.CUSTOMISATION_PLAN:
        unknown = [a for a in aspects if a not in ASPECTS]
        if unknown:
            raise ValueError(f"unknown aspects {unknown}")
        user += "\n\nFocus aspects: " + ", ".join(aspects)
        user += "\nAllowed sources: " + ", ".join(DEFAULT_PUBLISHERS)

    messages = [ChatMessage(Role.SYSTEM, profile.profile_text), ChatMessage(Role.USER, user)]
    for tool, ph in TASK_FILE_TOOLS[task.kind]:
        path = str(workspace.path(ph))
        content = run_tool(tool, {"path": path}, agent=profile)
        messages.append(ChatMessage(Role.TOOL, tool_header(tool, "{" + ph + "} " + path) + "\n" + content))

    queries: list[str] = []
    if task.kind is TaskKind.KNOWLEDGE_RETRIEVAL:
        queries = plan_queries(json.loads(workspace.read("custom_plan_path")))
    elif task.kind is TaskKind.VALIDATE_THRESHOLD:
        queries = [validation_query(json.loads(workspace.read("query_path")))]
    for q in queries:
        content = run_tool(ToolKind.SEARCH, {"query": q, "k": search_k}, agent=profile, search=search)
        messages.append(ChatMessage(Role.TOOL, tool_header(ToolKind.SEARCH, "query") + "\n" + content))
    return ChatExchange(tuple(messages), temperature=temperature, max_output=max_output)


# --- structured outputs -------------------------------------------------------

_FENCED = re.compile(r"```(?:json|JSON)?[ \t]*\r?\n(.*?)\r?\n[ \t]*```", re.DOTALL)


def structured_block(text: str) -> Any:
    for m in _FENCED.finditer(text):
        body = m.group(1).strip()
        if body.startswith("{"):
            try:
                return json.loads(body)
            except json.JSONDecodeError as exc:
                raise SchemaViolation("$", f"invalid JSON: {exc}") from exc
    raise NoStructuredBlock("no fenced JSON block in output")


def fenced(data: Any) -> str:
    return "```json\n" + json.dumps(data, indent=2, ensure_ascii=False) + "\n```"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CitationModel(_Model):
    url: str
    publisher: str = Field(min_length=1)
    title: str = ""
    doc_id: str = ""

    def to_citation(self) -> Citation:
        return Citation(self.publisher, self.url, self.title, self.doc_id)


class ThresholdModel(_Model):
    pest: str = Field(min_length=1)
    crop: str = Field(min_length=1)
    value: str | int | float
    unit: str
    raw_text: str = ""
    source: CitationModel

    @model_validator(mode="after")
    def _valid_record(self) -> ThresholdModel:
        self.to_record()
        return self

    def to_record(self) -> ThresholdRecord:
        return ThresholdRecord(
            self.pest, self.crop, Quantity(self.value, self.unit), self.source.to_citation(), self.raw_text
        )

    @classmethod
    def from_record(cls, record: ThresholdRecord) -> ThresholdModel:
        return cls.model_validate(record.to_json())


class PlanSection(_Model):
    name: str = Field(min_length=1)
    search_queries: list[str] = Field(min_length=1)
    recommended_sources: list[str] = Field(min_length=1)
    justification: str = ""


class CustomisationPlan(_Model):
    pest: str = Field(min_length=1)
    crop: str = Field(min_length=1)
    location: str = ""
    sections: list[PlanSection] = Field(min_length=1)

    @model_validator(mode="after")
    def _unique_names(self) -> CustomisationPlan:
        names = [s.name for s in self.sections]
        if len(set(names)) != len(names):
            raise ValueError("section names must be unique")
        for s in self.sections:
            if any(not q.strip() for q in s.search_queries):
                raise ValueError(f"section {s.name!r} has an empty search query")
        return self


class Finding(_Model):
    query: str = Field(min_length=1)
    summary: str
    citations: list[CitationModel] = []
    threshold: ThresholdModel | None = None

    @model_validator(mode="after")
    def _threshold_cited(self) -> Finding:
        if self.threshold is not None:
            ids = [c.doc_id for c in self.citations]
            if ids != [self.threshold.source.doc_id]:
                raise ValueError("a threshold finding must cite exactly the document that supplied it")
        return self


class ReportSection(_Model):
    name: str = Field(min_length=1)
    findings: list[Finding]
    analysis: str = ""


class RetrievalReport(_Model):
    sections: list[ReportSection] = Field(min_length=1)

    def thresholds(self) -> list[tuple[ThresholdRecord, Finding]]:
        return [
            (f.threshold.to_record(), f) for s in self.sections for f in s.findings if f.threshold is not None
        ]

    def citations(self) -> list[Citation]:
        out: list[Citation] = []
        for s in self.sections:
            for f in s.findings:
                for c in f.citations:
                    cit = c.to_citation()
                    if cit not in out:
                        out.append(cit)
        return out


Verdict = Literal["confirmed", "corrected", "unverifiable"]


class ValidationReport(_Model):
    verdict: Verdict
    original_pmd: StrictBool
    final_pmd: StrictBool
    threshold_cited: ThresholdModel | None = None
    justification: str = ""

    @model_validator(mode="after")
    def _verdict_rules(self) -> ValidationReport:
        if self.verdict == "corrected":
            if self.final_pmd == self.original_pmd:
                raise ValueError("verdict 'corrected' requires final_pmd != original_pmd")
            if self.threshold_cited is None:
                raise ValueError("verdict 'corrected' requires threshold_cited")
        elif self.final_pmd != self.original_pmd:
            raise ValueError(f"verdict {self.verdict!r} requires final_pmd == original_pmd")
        return self

    def threshold_record(self) -> ThresholdRecord | None:
        return self.threshold_cited.to_record() if self.threshold_cited else None


def _validate(model: type[BaseModel], data: Any) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "$"
        raise SchemaViolation(loc, err["msg"]) from exc


def parse_plan(text: str, allowed_publishers: Iterable[str] = DEFAULT_PUBLISHERS) -> CustomisationPlan:
    plan = _validate(CustomisationPlan, structured_block(text))
    allowed = set(allowed_publishers)
    for i, section in enumerate(plan.sections):
        bad = [p for p in section.recommended_sources if p not in allowed]
        if bad:
            raise SchemaViolation(f"sections.{i}.recommended_sources", f"not in allowlist: {bad}")
    return plan


def parse_retrieval_report(text: str, plan: CustomisationPlan | None = None) -> RetrievalReport:
    report = _validate(RetrievalReport, structured_block(text))
    if plan is not None:
        got = [s.name for s in report.sections]
        want = [s.name for s in plan.sections]
        if got != want:
            raise SchemaViolation("sections", f"names {got} do not match plan sections {want}")
    return report


def parse_validation_report(text: str) -> ValidationReport:
    return _validate(ValidationReport, structured_block(text))


# --- canonical artifact text -------------------------------------------------


def render_plan_output(plan: CustomisationPlan) -> str:
    lines = [f"Customisation plan for {plan.pest} on {plan.crop}.", ""]
    for s in plan.sections:
        lines.append(f"- {s.name}: {len(s.search_queries)} search quer{'y' if len(s.search_queries) == 1 else 'ies'}")
    return "\n".join(lines) + "\n\n" + fenced(plan.model_dump(mode="json")) + "\n"


def render_retrieval_report(report: RetrievalReport) -> str:
    out = ["# Retrieval Report", ""]
    for s in report.sections:
        out += [f"## {s.name}", ""]
        for f in s.findings:
            out.append(f"### Query: {f.query}")
            out.append(f.summary)
            for c in f.citations:
                out.append(f"- {c.publisher}: [{c.title}]({c.url})")
            out.append("")
        if s.analysis:
            out += [f"Analysis: {s.analysis}", ""]
    out.append(fenced(report.model_dump(mode="json")))
    return "\n".join(out) + "\n"


def render_validation_output(report: ValidationReport) -> str:
    marker = "true" if report.final_pmd else "false"
    return (
        f"Verdict: {report.verdict}\nPMD: {marker}\n\n{report.justification}\n\n"
        + fenced(report.model_dump(mode="json"))
        + "\n"
    )
