"""Deterministic rule-based stand-in for the three agents.

Every reply is a pure function of the prompt: the handler is chosen from the
task-type header and all data comes from the inlined tool outputs. Nothing is
read from disk or from a corpus object.
"""

from __future__ import annotations

import json
import re
from decimal import Decimal
from typing import Callable

from ..agents import (
    ASPECTS,
    DEFAULT_PUBLISHERS,
    TASK_HEADER,
    CitationModel,
    CustomisationPlan,
    Finding,
    PlanSection,
    ReportSection,
    RetrievalReport,
    TaskKind,
    ThresholdModel,
    ValidationReport,
    parse_retrieval_report,
    parse_search_results,
    render_plan_output,
    render_retrieval_report,
    render_validation_output,
    tool_messages,
)
from ..domain import (
    APPROACH_FRACTION,
    Confidence,
    PestScenario,
    PmaDocument,
    PmdDecision,
    Stage,
    ThresholdRecord,
    decide_pmd,
)
from ..errors import UnitMismatch, UnrecognizedScriptedTask
from ..knowledge import same_pair
from ..pma_markdown import format_citation, parse_pma_markdown, render_pma_markdown
from ..units import format_number
from .base import ChatExchange, Completion

_HEADER = re.compile(rf"^{TASK_HEADER}: *(\S+) *$", re.MULTILINE)

# Rough reference densities standing in for what an LLM "knows" without
# looking anything up. Deliberately coarse; the retrieved threshold replaces
# this estimate whenever one is found.
INTRINSIC_REFERENCE: dict[str, Decimal] = {
    "eggs-and-larvae": Decimal(5),
    "eggs": Decimal(10),
    "larvae": Decimal(2),
    "nematodes": Decimal(500),
    "aphids": Decimal(5),
    "beetles": Decimal(3),
    "adults": Decimal(10),
    "mites": Decimal(5),
    "thrips": Decimal(5),
    "slugs": Decimal(4),
    "leatherjackets": Decimal(50),
    "pests": Decimal(5),
}


def intrinsic_estimate(scenario: PestScenario) -> bool:
    kind = scenario.severity.unit.split("/", 1)[0]
    return scenario.severity.value > INTRINSIC_REFERENCE.get(kind, Decimal(0))


def task_kind(exchange: ChatExchange) -> TaskKind:
    for m in exchange.messages:
        if m.role.value == "user":
            found = _HEADER.search(m.content)
            if found:
                try:
                    return TaskKind(found.group(1))
                except ValueError:
                    break
    raise UnrecognizedScriptedTask("prompt carries no recognised task-type header")


def _tool(exchange: ChatExchange, placeholder: str) -> str:
    for kind, label, content in tool_messages(exchange):
        if label.startswith("{" + placeholder + "}"):
            return content
    raise UnrecognizedScriptedTask(f"prompt lacks tool output for {{{placeholder}}}")


def _searches(exchange: ChatExchange) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for kind, _, content in tool_messages(exchange):
        if kind == "search":
            first, _, _ = content.partition("\n")
            query = first.removeprefix("Search results for: ")
            out[query] = [r for r in parse_search_results(content) if r["publisher"] in DEFAULT_PUBLISHERS]
    return out


def _match_threshold(results: list[dict], pest: str, crop: str) -> ThresholdRecord | None:
    found = [t for r in results for t in r["thresholds"] if same_pair(t, pest, crop)]
    return min(found, key=lambda t: t.source.doc_id) if found else None


def _citation(result: dict) -> CitationModel:
    return CitationModel(
        publisher=result["publisher"], url=result.get("url", ""), title=result["title"], doc_id=result.get("doc_id", "")
    )


def _bool(value: bool) -> str:
    return "true" if value else "false"


# --- handlers ------------------------------------------------------------------


def _section_body(name: str, s: PestScenario) -> str:
    weather = f"{s.weather.lower() or 'unreported weather'}, {format_number(s.temperature)}°C"
    bodies = {
        "Pest Identification": (
            f"{s.pest} reported on {s.crop_name} at the {s.crop_growth_stage.lower() or 'current'} "
            f"stage in {s.location or 'the field'} during {s.time}."
        ),
        "Threshold Exceeded": (
            "Provisional estimate from general experience; confirm against the published "
            "regional action threshold."
        ),
        "IPM Strategies": (
            "- Use rotation, tolerant or resistant varieties and field hygiene as the first line of control.\n"
            "- Conserve natural enemies and keep chemical control for populations above threshold.\n"
            "- Where treatment is needed, choose the most selective approved option."
        ),
        "Economic Considerations": (
            f"Set the expected yield and quality loss in {s.crop_name} at {s.severity_text} against the full "
            "cost of intervention before acting."
        ),
        "Application Timing": (
            f"Match any intervention to the {s.crop_growth_stage.lower() or 'current'} growth stage and to "
            f"conditions ({weather}, {format_number(s.precipitation)} mm rainfall)."
        ),
        "Post-Treatment Monitoring": (
            f"Re-assess {s.pest} numbers 7 to 14 days after any action and record the outcome."
        ),
        "Preventative Measures": (
            "Keep rotations wide, control volunteers and weed hosts, and avoid moving infested soil "
            "or plant material between fields."
        ),
        "Environmental Considerations": (
            f"Humidity of {format_number(s.humidity)}% and {format_number(s.precipitation)} mm rainfall "
            f"in {s.time} affect pest activity. Protect pollinators, soil and watercourses."
        ),
    }
    return bodies.get(name, f"Guidance on {name.lower()} for {s.pest} on {s.crop_name}.")


def _initial_pma(exchange: ChatExchange) -> str:
    scenario = PestScenario.from_json(json.loads(_tool(exchange, "query_path"))).without_label()
    template = parse_pma_markdown(_tool(exchange, "example_pma_path"), default_stage=Stage.INITIAL)
    action = intrinsic_estimate(scenario)
    rationale = (
        f"Judged from general experience, {scenario.severity} "
        f"{'is likely to cause economic damage' if action else 'is unlikely to need immediate action'}; "
        "no published threshold consulted yet."
    )
    decision = PmdDecision(action, scenario.severity, None, rationale, Confidence.MODEL_ESTIMATED)
    sections = tuple((name, _section_body(name, scenario)) for name, _ in template.sections)
    return render_pma_markdown(PmaDocument(scenario, sections, decision, Stage.INITIAL))


def _customisation_plan(exchange: ChatExchange) -> str:
    doc = parse_pma_markdown(_tool(exchange, "initial_pma_path"), default_stage=Stage.INITIAL)
    s = doc.scenario_echo
    aspects = ["pmd"]
    for m in exchange.messages:
        found = re.search(r"^Focus aspects: *(.+)$", m.content, re.MULTILINE)
        if m.role.value == "user" and found:
            aspects = [a.strip() for a in found.group(1).split(",") if a.strip()]
    sections = []
    for key in aspects:
        name, pattern, sources = ASPECTS[key]
        query = " ".join(pattern.format(pest=s.pest, crop=s.crop_name, location=s.location, month=s.time).split())
        if key == "pmd":
            why = (
                f"The draft decision rests on an estimate; the published action threshold for {s.pest} "
                f"in {s.crop_name} is needed to settle it."
            )
        else:
            why = f"Regional guidance can make the {name} advice specific to {s.location or 'the region'}."
        sections.append(PlanSection(name=name, search_queries=[query], recommended_sources=list(sources), justification=why))
    plan = CustomisationPlan(pest=s.pest, crop=s.crop_name, location=s.location, sections=sections)
    return render_plan_output(plan)


def _knowledge_retrieval(exchange: ChatExchange) -> str:
    plan = CustomisationPlan.model_validate(json.loads(_tool(exchange, "custom_plan_path")))
    searches = _searches(exchange)
    sections = []
    for section in plan.sections:
        findings = []
        found_any = False
        for query in section.search_queries:
            results = searches.get(query, [])
            threshold = _match_threshold(results, plan.pest, plan.crop)
            if threshold is not None:
                found_any = True
                src = threshold.source
                summary = f"{src.publisher} gives the action threshold for {threshold.pest} in {threshold.crop_name}: {threshold.raw_text}."
                findings.append(
                    Finding(
                        query=query,
                        summary=summary,
                        citations=[CitationModel(**src.to_json())],
                        threshold=ThresholdModel.from_record(threshold),
                    )
                )
            elif results:
                top = results[0]
                summary = f"{len(results)} result(s). Most relevant ({top['publisher']}): {top.get('snippet', '')}"
                findings.append(Finding(query=query, summary=summary, citations=[_citation(r) for r in results[:3]]))
            else:
                findings.append(Finding(query=query, summary="No relevant guidance found.", citations=[]))
        if section.name == ASPECTS["pmd"][0]:
            analysis = (
                "A published threshold allows the decision to be made by direct comparison with the measured severity."
                if found_any
                else "No published threshold was found; the draft decision remains an estimate."
            )
        else:
            analysis = f"The findings add regional detail to the {section.name} advice."
        sections.append(ReportSection(name=section.name, findings=findings, analysis=analysis))
    return render_retrieval_report(RetrievalReport(sections=sections))


def _customised_pma(exchange: ChatExchange) -> str:
    doc = parse_pma_markdown(_tool(exchange, "initial_pma_path"), default_stage=Stage.INITIAL)
    report = parse_retrieval_report(_tool(exchange, "retrieved_info_path"))
    s = doc.scenario_echo
    candidates = [t for t, _ in report.thresholds() if same_pair(t, s.pest, s.crop_name)]
    threshold = min(candidates, key=lambda t: t.source.doc_id) if candidates else None

    decision = doc.decision_block
    if threshold is None:
        note = "No published threshold was found for this pest and crop; the provisional estimate stands."
    else:
        try:
            decision = decide_pmd(s.severity, threshold)
            note = f"Decision based on the published {threshold.source.publisher} action threshold."
        except UnitMismatch:
            note = (
                f"The published threshold is given in {threshold.threshold.unit}, which cannot be compared "
                f"with the measured {s.severity.unit}; the provisional estimate stands."
            )
    doc = doc.with_decision(decision, Stage.CUSTOMISED).with_section("Threshold Exceeded", note)
    names = dict(doc.sections)
    for section in report.sections:
        if section.name in names and section.name != "Threshold Exceeded":
            extra = " ".join(f.summary for f in section.findings if f.citations)
            if extra:
                doc = doc.with_section(section.name, names[section.name] + "\n\nRegional guidance: " + extra)
    return render_pma_markdown(doc.with_citations(report.citations()))


def _validate_threshold(exchange: ChatExchange) -> str:
    doc = parse_pma_markdown(_tool(exchange, "custom_pma_path"), default_stage=Stage.CUSTOMISED)
    s = doc.scenario_echo
    original = doc.decision_block.action_required
    results = [r for rs in _searches(exchange).values() for r in rs]
    threshold = _match_threshold(results, s.pest, s.crop_name)

    recomputed = None
    if threshold is not None:
        try:
            recomputed = decide_pmd(s.severity, threshold)
        except UnitMismatch:
            recomputed = None
    if recomputed is None:
        reason = (
            f"No published threshold for {s.pest} on {s.crop_name} was found in the search results"
            if threshold is None
            else f"The published threshold ({threshold.threshold}) is not comparable with {s.severity}"
        )
        report = ValidationReport(
            verdict="unverifiable",
            original_pmd=original,
            final_pmd=original,
            threshold_cited=None,
            justification=f"{reason}; the decision in the customised advice (PMD: {_bool(original)}) stands unverified.",
        )
        return render_validation_output(report)

    t = threshold
    final = recomputed.action_required
    verdict = "confirmed" if final == original else "corrected"
    verb = "exceeds" if final else "does not exceed"
    text = (
        f"{t.source.publisher} guidance: the action threshold for {t.pest} in {t.crop_name} is {t.threshold} "
        f"(\"{t.raw_text}\"; source: {format_citation(t.source)[2:]}). The customised advice reports {s.severity} "
        f"and concludes PMD: {_bool(original)}. The severity {verb} the threshold, so "
    )
    text += (
        "the decision is confirmed."
        if verdict == "confirmed"
        else f"the decision is corrected to PMD: {_bool(final)}."
    )
    if not final and s.severity.value >= t.threshold.value * APPROACH_FRACTION:
        text += (
            " Levels are approaching the threshold; the advice should cite the threshold explicitly "
            "and recommend close monitoring."
        )
    report = ValidationReport(
        verdict=verdict,
        original_pmd=original,
        final_pmd=final,
        threshold_cited=ThresholdModel.from_record(t),
        justification=text,
    )
    return render_validation_output(report)


HANDLERS: dict[TaskKind, Callable[[ChatExchange], str]] = {
    TaskKind.INITIAL_PMA: _initial_pma,
    TaskKind.CUSTOMISATION_PLAN: _customisation_plan,
    TaskKind.KNOWLEDGE_RETRIEVAL: _knowledge_retrieval,
    TaskKind.CUSTOMISED_PMA: _customised_pma,
    TaskKind.VALIDATE_THRESHOLD: _validate_threshold,
}


class ScriptedBackend:
    kind = "scripted"

    def complete(self, exchange: ChatExchange, agent: str | None = None) -> Completion:
        kind = task_kind(exchange)
        text = HANDLERS[kind](exchange)
        return Completion(
            text,
            {
                "backend": "scripted",
                "task": kind.value,
                "attempts": 1,
                "prompt_chars": len(exchange.text()),
                "output_chars": len(text),
            },
        )
