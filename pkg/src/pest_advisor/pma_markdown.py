"""Canonical markdown form of a :class:`PmaDocument` and its parser.

Layout::

    # Pest Management Advice: <pest> on <crop>

    Stage: customised

    ## Pest Identification
    - Pest: ...
    ...

    ## Threshold Exceeded
    PMD: false
    Severity: 1 eggs-and-larvae/gram-soil
    ...

    ## References
    - AHDB: [title](url) (doc-id)
"""

from __future__ import annotations

import re

from .domain import (
    REFERENCES_SECTION,
    REQUIRED_SECTIONS,
    Citation,
    Confidence,
    PestScenario,
    PmaDocument,
    PmdDecision,
    Stage,
    ThresholdRecord,
)
from .errors import (
    DuplicateSection,
    MissingDecisionMarker,
    MissingSection,
    PmaParseError,
    UnparsableQuantity,
)
from .units import Quantity, format_number, parse_quantity

MARKER_KEY = "PMD"
_MARKER = re.compile(r"^PMD:\s*(true|false)\s*$", re.IGNORECASE)
_CITATION = re.compile(
    r"^- (?P<pub>[^:\[\]]+): \[(?P<title>[^\[\]]*)\]\((?P<url>[^()\s]*)\)"
    r"(?: \((?P<doc>[^()\s]+)\))?\s*$"
)

# (markdown label, PestScenario attribute)
_ECHO_KEYS = (
    ("Scenario ID", "scenario_id"),
    ("Pest", "pest"),
    ("Infestation Severity", "severity_text"),
    ("Crop Name", "crop_name"),
    ("Crop Growth Stage", "crop_growth_stage"),
    ("Temperature", "temperature"),
    ("Weather", "weather"),
    ("Humidity", "humidity"),
    ("Precipitation", "precipitation"),
    ("Time", "time"),
    ("Location", "location"),
)
_ECHO_JSON = {
    "Scenario ID": "ScenarioId",
    "Pest": "Pest",
    "Infestation Severity": "InfestationSeverity",
    "Crop Name": "CropName",
    "Crop Growth Stage": "CropGrowthStage",
    "Temperature": "Temperature",
    "Weather": "Weather",
    "Humidity": "Humidity",
    "Precipitation": "Precipitation",
    "Time": "Time",
    "Location": "Location",
}
_UNIT_SUFFIX = {"temperature": "°C", "humidity": "%", "precipitation": "mm"}


def format_citation(c: Citation) -> str:
    line = f"- {c.publisher}: [{c.title}]({c.url})"
    return f"{line} ({c.doc_id})" if c.doc_id else line


def parse_citation(line: str) -> Citation:
    m = _CITATION.match(line.strip())
    if m is None:
        raise PmaParseError(f"malformed citation line: {line!r}")
    return Citation(m["pub"], m["url"], m["title"], m["doc"] or "")


def _echo_lines(s: PestScenario) -> list[str]:
    lines = []
    for label, attr in _ECHO_KEYS:
        value = getattr(s, attr)
        if attr == "scenario_id":
            if value is None:
                continue
        elif attr in _UNIT_SUFFIX:
            value = format_number(value) + _UNIT_SUFFIX[attr]
        lines.append(f"- {label}: {value}".rstrip())
    return lines


def _decision_lines(d: PmdDecision) -> list[str]:
    lines = [
        f"{MARKER_KEY}: {'true' if d.action_required else 'false'}",
        f"Severity: {d.severity_used}",
        f"Confidence: {d.confidence.value}",
    ]
    t = d.threshold_used
    if t is not None:
        lines += [
            f"Threshold: {t.threshold}",
            f"Threshold Pest: {t.pest}",
            f"Threshold Crop: {t.crop_name}",
            f"Threshold Statement: {t.raw_text}".rstrip(),
            "Threshold Source: " + format_citation(t.source)[2:],
        ]
    lines.append(f"Rationale: {d.rationale}".rstrip())
    return lines


def render_pma_markdown(doc: PmaDocument) -> str:
    s = doc.scenario_echo
    out = [f"# Pest Management Advice: {s.pest} on {s.crop_name}", "", f"Stage: {doc.stage.value}", ""]
    for name, body in doc.sections:
        out.append(f"## {name}")
        if name == "Pest Identification":
            out += _echo_lines(s)
        elif name == "Threshold Exceeded":
            out += _decision_lines(doc.decision_block)
        if body:
            if name in ("Pest Identification", "Threshold Exceeded"):
                out.append("")
            out.append(body)
        out.append("")
    if doc.citations:
        out.append(f"## {REFERENCES_SECTION}")
        out += [format_citation(c) for c in doc.citations]
        out.append("")
    return "\n".join(out)


def _split_sections(text: str) -> tuple[list[str], list[tuple[str, list[str]]]]:
    preamble: list[str] = []
    sections: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        if line.startswith("## "):
            sections.append((line[3:].strip(), []))
        elif sections:
            sections[-1][1].append(line)
        else:
            preamble.append(line)
    return preamble, sections


def _leading_block(lines: list[str]) -> tuple[list[str], str]:
    """Split off the key/value lines that open a section, before the first blank line."""
    i = 0
    while i < len(lines) and not lines[i].strip():
        i += 1
    start = i
    while i < len(lines) and lines[i].strip():
        i += 1
    return lines[start:i], "\n".join(lines[i:]).strip()


def _key_values(lines: list[str], *, bullet: bool, section: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in lines:
        text = line.strip()
        if bullet:
            if not text.startswith("- "):
                raise PmaParseError(f"{section}: expected '- Key: value', got {line!r}")
            text = text[2:]
        key, sep, value = text.partition(":")
        if not sep:
            raise PmaParseError(f"{section}: expected 'Key: value', got {line!r}")
        key = key.strip()
        if key in out:
            raise PmaParseError(f"{section}: repeated key {key!r}")
        out[key] = value.strip()
    return out


def _parse_echo(lines: list[str]) -> tuple[PestScenario, str]:
    block, body = _leading_block(lines)
    kv = _key_values(block, bullet=True, section="Pest Identification")
    unknown = set(kv) - set(_ECHO_JSON)
    if unknown:
        raise PmaParseError(f"Pest Identification: unknown attributes {sorted(unknown)}")
    data = {_ECHO_JSON[k]: v for k, v in kv.items()}
    try:
        return PestScenario.from_json(data), body
    except ValueError as exc:
        raise PmaParseError(f"Pest Identification: {exc}") from exc


def _parse_quantity_field(text: str) -> Quantity:
    try:
        return Quantity.parse_token_form(text)
    except (ValueError, UnparsableQuantity):
        return parse_quantity(text)


def _parse_decision(lines: list[str], scenario: PestScenario) -> tuple[PmdDecision, str]:
    block, body = _leading_block(lines)
    if not block or not _MARKER.match(block[0].strip()):
        raise MissingDecisionMarker("Threshold Exceeded must open with 'PMD: true|false'")
    kv = _key_values(block, bullet=False, section="Threshold Exceeded")
    try:
        action = kv.pop(MARKER_KEY).lower() == "true"
        severity = _parse_quantity_field(kv.pop("Severity")) if "Severity" in kv else scenario.severity
        threshold = None
        if "Threshold" in kv:
            source_line = kv.pop("Threshold Source", "")
            threshold = ThresholdRecord(
                pest=kv.pop("Threshold Pest", scenario.pest),
                crop_name=kv.pop("Threshold Crop", scenario.crop_name),
                threshold=_parse_quantity_field(kv.pop("Threshold")),
                source=parse_citation("- " + source_line),
                raw_text=kv.pop("Threshold Statement", ""),
            )
        default_conf = Confidence.CORPUS_BACKED if threshold else Confidence.MODEL_ESTIMATED
        confidence = Confidence(kv.pop("Confidence", default_conf.value))
        rationale = kv.pop("Rationale", "")
        if kv:
            raise PmaParseError(f"Threshold Exceeded: unknown keys {sorted(kv)}")
        return PmdDecision(action, severity, threshold, rationale, confidence), body
    except PmaParseError:
        raise
    except (ValueError, KeyError) as exc:
        raise PmaParseError(f"Threshold Exceeded: {exc}") from exc


def parse_pma_markdown(text: str, *, default_stage: Stage | str | None = None) -> PmaDocument:
    preamble, raw_sections = _split_sections(text)
    names = [n for n, _ in raw_sections]
    for name in names:
        if names.count(name) > 1:
            raise DuplicateSection(f"section {name!r} appears {names.count(name)} times")
    missing = [n for n in REQUIRED_SECTIONS if n not in names]
    if missing:
        raise MissingSection(f"missing sections: {', '.join(missing)}")
    by_name = dict(raw_sections)

    stage = default_stage
    for line in preamble:
        key, sep, value = line.partition(":")
        if sep and key.strip().lower() == "stage":
            stage = value.strip().lower()
    if stage is None:
        raise PmaParseError("missing 'Stage:' line")
    try:
        stage = Stage(stage)
    except ValueError as exc:
        raise PmaParseError(str(exc)) from exc

    scenario, echo_body = _parse_echo(by_name["Pest Identification"])
    decision, decision_body = _parse_decision(by_name["Threshold Exceeded"], scenario)

    sections: list[tuple[str, str]] = []
    citations: list[Citation] = []
    for name, lines in raw_sections:
        if name == REFERENCES_SECTION:
            citations = [parse_citation(line) for line in lines if line.strip()]
        elif name == "Pest Identification":
            sections.append((name, echo_body))
        elif name == "Threshold Exceeded":
            sections.append((name, decision_body))
        else:
            sections.append((name, "\n".join(lines).strip()))
    try:
        return PmaDocument(scenario, tuple(sections), decision, stage, tuple(citations))
    except ValueError as exc:
        raise PmaParseError(str(exc)) from exc


def read_marker(text: str) -> bool:
    """Return the boolean on the decision marker line, without a full parse."""
    _, raw_sections = _split_sections(text)
    for name, lines in raw_sections:
        if name == "Threshold Exceeded":
            block, _ = _leading_block(lines)
            if block:
                m = _MARKER.match(block[0].strip())
                if m:
                    return m.group(1).lower() == "true"
    raise MissingDecisionMarker("no 'PMD: true|false' line under Threshold Exceeded")


def flip_marker(text: str) -> str:
    """Negate the decision marker line; used by the fault-injection hook."""
    out, flipped, in_section = [], False, False
    for line in text.splitlines():
        if line.startswith("## "):
            in_section = line[3:].strip() == "Threshold Exceeded"
        elif in_section and not flipped:
            m = _MARKER.match(line.strip())
            if m:
                line = f"{MARKER_KEY}: {'false' if m.group(1).lower() == 'true' else 'true'}"
                flipped = True
        out.append(line)
    if not flipped:
        raise MissingDecisionMarker("no decision marker to flip")
    return "\n".join(out) + ("\n" if text.endswith("\n") else "")
