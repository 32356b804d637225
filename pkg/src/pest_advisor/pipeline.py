"""Five-stage Editor/Retriever/Validator pipeline with file-based handoff."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .agents import (
    DEFAULT_PROFILES,
    PMD_ASPECTS,
    SEARCH_K,
    STAGE_ORDER,
    AgentProfile,
    CustomisationPlan,
    TaskKind,
    TaskSpec,
    ValidationReport,
    default_tasks,
    parse_plan,
    parse_retrieval_report,
    parse_validation_report,
    render_prompt,
    render_retrieval_report,
)
from .domain import (
    LABEL_FIELD,
    Confidence,
    PestScenario,
    PmaDocument,
    PmdDecision,
    Stage,
)
from .errors import (
    BackendTimeout,
    RemoteRefusal,
    ScenarioInvalid,
    SchemaViolation,
    StageFailure,
)
from .knowledge import Corpus, SearchProvider
from .llm import Backend, BackendConfig, make_backend
from .pma_markdown import parse_pma_markdown, render_pma_markdown
from .workspace import (
    TRACE_FILE,
    VALIDATED_PMA_FILE,
    VALIDATION_FILE,
    Workspace,
)

logger = logging.getLogger(__name__)

WORKSPACE_TOKEN = "$WORKSPACE"


@dataclass(frozen=True)
class FaultSpec:
    """Flips the customised advice's decision marker to simulate Editor errors.

    With ``targets`` set, exactly those scenario ids are flipped. Otherwise each
    scenario is flipped with probability ``rate`` from an RNG keyed on
    ``(seed, scenario_id)``, so the outcome does not depend on run order.
    """

    rate: float = 0.0
    targets: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("fault rate must be within [0, 1]")
        if self.targets is not None:
            object.__setattr__(self, "targets", frozenset(self.targets))

    def should_flip(self, scenario_id: str, seed: int) -> bool:
        if self.targets is not None:
            return scenario_id in self.targets
        if self.rate <= 0.0:
            return False
        return random.Random(f"{seed}:{scenario_id}").random() < self.rate

    def to_json(self) -> dict[str, Any]:
        return {"rate": self.rate, "targets": sorted(self.targets) if self.targets is not None else None}


NO_FAULTS = FaultSpec()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class StageRecord:
    stage: str
    agent: str
    started: str
    ended: str | None = None
    prompt_digest: str | None = None
    output_digest: str | None = None
    usage: dict[str, Any] = field(default_factory=dict)
    error: str | None = None
    fault_injected: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "agent": self.agent,
            "started": self.started,
            "ended": self.ended,
            "prompt_digest": self.prompt_digest,
            "output_digest": self.output_digest,
            "usage": self.usage,
            "error": self.error,
            "fault_injected": self.fault_injected,
        }


@dataclass
class PipelineTrace:
    run_id: str
    scenario_id: str
    stages: list[StageRecord] = field(default_factory=list)
    final_pmd: PmdDecision | None = None
    validator_verdict: str | None = None
    status: str = "running"
    failed_stage: str | None = None

    def to_json(self) -> dict[str, Any]:
        final = None
        if self.final_pmd is not None:
            d = self.final_pmd
            final = {
                "action_required": d.action_required,
                "severity": str(d.severity_used),
                "threshold": d.threshold_used.to_json() if d.threshold_used else None,
                "confidence": d.confidence.value,
                "rationale": d.rationale,
            }
        return {
            "run_id": self.run_id,
            "scenario_id": self.scenario_id,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "stages": [s.to_json() for s in self.stages],
            "final_pmd": final,
            "validator_verdict": self.validator_verdict,
        }


def example_assets() -> tuple[str, str]:
    """Bundled (example scenario JSON, example advice markdown)."""
    base = resources.files("pest_advisor") / "data" / "example"
    return (base / "scenario.json").read_text(encoding="utf-8"), (base / "pma.md").read_text(encoding="utf-8")


def _one_line(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _query_scenario(ws: Workspace) -> PestScenario:
    return PestScenario.from_json(json.loads(ws.read("query_path")))


class Pipeline:
    """Runs the five agent tasks for one scenario at a time.

    A pipeline object holds no per-run state, so one instance can serve many
    concurrent runs as long as each uses its own workspace root.
    """

    def __init__(
        self,
        backend: Backend,
        search: SearchProvider,
        *,
        fault: FaultSpec = NO_FAULTS,
        seed: int = 0,
        tasks: dict[TaskKind, TaskSpec] | None = None,
        profiles: dict | None = None,
        aspects: Sequence[str] = PMD_ASPECTS,
        search_k: int = SEARCH_K,
        stage_retries: int = 0,
        temperature: float = 0.0,
        max_output: int = 4096,
        example: tuple[str, str] | None = None,
    ) -> None:
        self.backend = backend
        self.search = search
        self.fault = fault
        self.seed = seed
        self.tasks = tasks or default_tasks()
        self.profiles: dict[Any, AgentProfile] = {**DEFAULT_PROFILES, **(profiles or {})}
        self.aspects = tuple(aspects)
        self.search_k = search_k
        self.stage_retries = stage_retries if getattr(backend, "kind", "") == "remote" else 0
        self.temperature = temperature
        self.max_output = max_output
        self.example = example or example_assets()

    # -- workspace setup ------------------------------------------------------

    def prepare(self, scenario: PestScenario, root: str | Path) -> Workspace:
        """Write the three input artifacts. The query never carries its label."""
        ws = Workspace(Path(root))
        example_json, example_md = self.example
        example = json.loads(example_json)
        example.pop(LABEL_FIELD, None)
        ws.write_json_once("query.json", scenario.to_json(include_label=False))
        ws.write_json_once("example.json", example)
        ws.write_once("example_pma.md", example_md)
        return ws

    # -- one stage --------------------------------------------------------------

    def run_stage(self, kind: TaskKind | str, ws: Workspace, record: StageRecord | None = None) -> str:
        """Render, dispatch, parse and persist one task. Returns the artifact text."""
        kind = TaskKind(kind)
        task = self.tasks[kind]
        exchange = render_prompt(
            task,
            ws,
            search=self.search,
            profile=self.profiles[task.agent],
            aspects=self.aspects,
            search_k=self.search_k,
            temperature=self.temperature,
            max_output=self.max_output,
        )
        if record is not None:
            record.prompt_digest = exchange.digest({str(ws.root): WORKSPACE_TOKEN})

        completion = None
        for attempt in range(self.stage_retries + 1):
            try:
                completion = self.backend.complete(exchange, task.agent.value)
                break
            except (BackendTimeout, RemoteRefusal) as exc:
                retryable = not isinstance(exc, RemoteRefusal) or exc.status >= 500 or exc.status == 429
                if attempt >= self.stage_retries or not retryable:
                    raise
                logger.warning("stage %s attempt %d failed: %s", kind.value, attempt + 1, exc)
        assert completion is not None
        if record is not None:
            record.usage = dict(completion.usage)

        text, name = self._persist(kind, ws, completion.text, record)
        if record is not None:
            record.output_digest = _sha(text)
        return text

    def _persist(self, kind: TaskKind, ws: Workspace, output: str, record: StageRecord | None) -> tuple[str, str]:
        name = self.tasks[kind].output_artifact
        if kind is TaskKind.INITIAL_PMA:
            doc = self._own_scenario(parse_pma_markdown(output, default_stage=Stage.INITIAL), ws, Stage.INITIAL)
            text = render_pma_markdown(doc)
        elif kind is TaskKind.CUSTOMISATION_PLAN:
            plan = parse_plan(output)
            text = json.dumps(plan.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"
        elif kind is TaskKind.KNOWLEDGE_RETRIEVAL:
            plan = CustomisationPlan.model_validate(json.loads(ws.read("custom_plan_path")))
            text = render_retrieval_report(parse_retrieval_report(output, plan))
        elif kind is TaskKind.CUSTOMISED_PMA:
            doc = self._own_scenario(parse_pma_markdown(output, default_stage=Stage.CUSTOMISED), ws, Stage.CUSTOMISED)
            scenario = doc.scenario_echo
            if self.fault.should_flip(scenario.scenario_id or "scenario", self.seed):
                d = doc.decision_block
                doc = doc.with_decision(replace(d, action_required=not d.action_required))
                if record is not None:
                    record.fault_injected = True
            text = render_pma_markdown(doc)
        else:
            report = parse_validation_report(output)
            custom = parse_pma_markdown(ws.read("custom_pma_path"))
            if report.original_pmd != custom.decision_block.action_required:
                raise SchemaViolation(
                    "original_pmd",
                    f"validator read PMD {report.original_pmd} but the customised advice says "
                    f"{custom.decision_block.action_required}",
                )
            text = json.dumps(report.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"
        ws.write_once(name, text)
        return text, name

    @staticmethod
    def _own_scenario(doc: PmaDocument, ws: Workspace, stage: Stage) -> PmaDocument:
        # The orchestrator's copy of the scenario is authoritative.
        query = _query_scenario(ws)
        if (doc.scenario_echo.pest, doc.scenario_echo.crop_name) != (query.pest, query.crop_name):
            raise SchemaViolation("scenario_echo", "advice describes a different pest or crop than the query")
        return replace(doc, scenario_echo=query, stage=stage)

    # -- whole run ----------------------------------------------------------------

    def run_id(self, scenario: PestScenario) -> str:
        payload = json.dumps(
            {
                "scenario": scenario.to_json(include_label=False),
                "backend": getattr(self.backend, "kind", "custom"),
                "fault": self.fault.to_json(),
                "seed": self.seed,
                "aspects": list(self.aspects),
            },
            sort_keys=True,
        )
        return "run-" + _sha(payload)[:16]

    def run(self, scenario: PestScenario, root: str | Path) -> PipelineTrace:
        if not isinstance(scenario, PestScenario):
            raise ScenarioInvalid("run expects a PestScenario")
        ws = self.prepare(scenario, root)
        trace = PipelineTrace(self.run_id(scenario), scenario.scenario_id or "scenario")
        try:
            for kind in STAGE_ORDER:
                record = StageRecord(kind.value, self.tasks[kind].agent.value, _now())
                trace.stages.append(record)
                try:
                    self.run_stage(kind, ws, record)
                except Exception as exc:
                    record.error = f"{type(exc).__name__}: {exc}"
                    record.ended = _now()
                    trace.status = "failed"
                    trace.failed_stage = kind.value
                    raise StageFailure(kind.value, exc) from exc
                record.ended = _now()
            report = ValidationReport.model_validate(ws.read_json(VALIDATION_FILE))
            trace.validator_verdict = report.verdict
            trace.final_pmd = extract_final_pmd(ws)
            ws.write_once(VALIDATED_PMA_FILE, render_pma_markdown(validated_document(ws)))
            trace.status = "completed"
        finally:
            ws.write_json_once(TRACE_FILE, trace.to_json())
        return trace


# -- extraction -----------------------------------------------------------------


def _custom_doc(ws: Workspace) -> PmaDocument:
    return parse_pma_markdown(ws.read("custom_pma_path"), default_stage=Stage.CUSTOMISED)


def extract_stage1_pmd(workspace: Workspace | str | Path) -> PmdDecision:
    """Decision in the customised advice, before the Validator looks at it."""
    ws = workspace if isinstance(workspace, Workspace) else Workspace(Path(workspace))
    return _custom_doc(ws).decision_block


def _validation(ws: Workspace) -> ValidationReport:
    return ValidationReport.model_validate(ws.read_json(VALIDATION_FILE, "validation.json"))


def extract_final_pmd(workspace: Workspace | str | Path) -> PmdDecision:
    """Decision after validation; ``action_required`` is the report's final_pmd."""
    ws = workspace if isinstance(workspace, Workspace) else Workspace(Path(workspace))
    report = _validation(ws)
    custom = _custom_doc(ws)
    threshold = report.threshold_record()
    confidence = Confidence.CORPUS_BACKED if threshold else Confidence.MODEL_ESTIMATED
    return PmdDecision(
        report.final_pmd,
        custom.decision_block.severity_used,
        threshold,
        _one_line(report.justification) or f"Validator verdict: {report.verdict}",
        confidence,
    )


def validated_document(workspace: Workspace | str | Path) -> PmaDocument:
    """The customised advice with the Validator's decision and notes applied."""
    ws = workspace if isinstance(workspace, Workspace) else Workspace(Path(workspace))
    report = _validation(ws)
    custom = _custom_doc(ws)
    doc = custom.with_decision(extract_final_pmd(ws), Stage.VALIDATED)
    doc = doc.with_section("Validation", f"Verdict: {report.verdict}\n\n{report.justification.strip()}")
    threshold = report.threshold_record()
    return doc.with_citations([threshold.source] if threshold else [])


# -- convenience wrapper -----------------------------------------------------------


def run_pipeline(
    scenario: PestScenario,
    corpus: Corpus | SearchProvider,
    backend_config: BackendConfig,
    workspace_root: str | Path,
    *,
    fault: FaultSpec = NO_FAULTS,
    seed: int = 0,
    **kwargs: Any,
) -> PipelineTrace:
    backend = make_backend(backend_config)
    pipeline = Pipeline(
        backend,
        corpus,
        fault=fault,
        seed=seed,
        temperature=backend_config.temperature,
        max_output=backend_config.max_output,
        **kwargs,
    )
    return pipeline.run(scenario, workspace_root)


def load_trace(workspace: str | Path) -> dict[str, Any]:
    ws = Workspace(Path(workspace))
    return ws.read_json(TRACE_FILE, "run.json")


__all__ = [
    "FaultSpec",
    "NO_FAULTS",
    "Pipeline",
    "PipelineTrace",
    "StageRecord",
    "extract_final_pmd",
    "extract_stage1_pmd",
    "load_trace",
    "run_pipeline",
    "validated_document",
]
