"""Scenario, threshold and decision types, plus the action-threshold rule."""

from __future__ import annotations

import calendar
import enum
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Iterable, Mapping

from .errors import ScenarioInvalid, UnitMismatch
from .units import Quantity, UnitRegistry, format_number, normalize_units, parse_quantity

# Scenario JSON field names, in display order.
SCENARIO_FIELDS = (
    "Pest",
    "InfestationSeverity",
    "CropName",
    "CropGrowthStage",
    "Temperature",
    "Weather",
    "Humidity",
    "Precipitation",
    "Time",
    "Location",
)
LABEL_FIELD = "PestManagementDecision"
ID_FIELD = "ScenarioId"

REQUIRED_SECTIONS = (
    "Pest Identification",
    "Threshold Exceeded",
    "IPM Strategies",
    "Economic Considerations",
    "Application Timing",
    "Post-Treatment Monitoring",
    "Preventative Measures",
    "Environmental Considerations",
)
REFERENCES_SECTION = "References"

# Closing fraction of the threshold at which rationale text notes that levels
# are approaching it. Affects wording only, never the boolean.
APPROACH_FRACTION = Decimal("0.75")

_MONTHS = {m.lower(): m for m in calendar.month_name if m}
_NUMERIC_PREFIX = re.compile(r"^\s*(-?\d+(?:\.\d+)?)\s*(.*?)\s*$")


class Confidence(str, enum.Enum):
    CORPUS_BACKED = "corpus-backed"
    MODEL_ESTIMATED = "model-estimated"


class Stage(str, enum.Enum):
    INITIAL = "initial"
    CUSTOMISED = "customised"
    VALIDATED = "validated"


def _single_line(name: str, value: str) -> None:
    if "\n" in value or "\r" in value:
        raise ValueError(f"{name} must be a single line")


def _measure(value: Any, name: str, suffixes: tuple[str, ...]) -> Decimal:
    """Read numbers such as ``15``, ``"15°C"``, ``"20mm"`` or ``"75%"``."""
    if isinstance(value, bool) or value is None:
        raise ScenarioInvalid(f"{name}: expected a number, got {value!r}")
    if isinstance(value, (int, float, Decimal)):
        return Decimal(str(value))
    m = _NUMERIC_PREFIX.match(str(value))
    if m is None or m.group(2).lower().replace(" ", "") not in suffixes:
        raise ScenarioInvalid(f"{name}: cannot read {value!r}")
    return Decimal(m.group(1))


def _json_number(value: Decimal) -> int | float:
    return int(value) if value == value.to_integral_value() else float(value)


@dataclass(frozen=True)
class PestScenario:
    pest: str
    severity_text: str
    crop_name: str
    crop_growth_stage: str
    temperature: Decimal
    weather: str
    humidity: Decimal
    precipitation: Decimal
    time: str
    location: str
    ground_truth_pmd: bool | None = None
    scenario_id: str | None = None
    severity: Quantity = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        for name in (
            "pest", "severity_text", "crop_name", "crop_growth_stage",
            "weather", "time", "location",
        ):
            object.__setattr__(self, name, str(getattr(self, name)).strip())
        for name in ("pest", "severity_text", "crop_name"):
            if not getattr(self, name):
                raise ScenarioInvalid(f"{name} must be non-empty")
        for name in (
            "pest", "severity_text", "crop_name", "crop_growth_stage",
            "weather", "time", "location",
        ):
            if "\n" in getattr(self, name):
                raise ScenarioInvalid(f"{name} must be a single line")
        for name in ("temperature", "humidity", "precipitation"):
            object.__setattr__(self, name, Decimal(str(getattr(self, name))))
        if not Decimal(0) <= self.humidity <= Decimal(100):
            raise ScenarioInvalid(f"humidity must be within [0, 100], got {self.humidity}")
        if self.precipitation < 0:
            raise ScenarioInvalid(f"precipitation must be >= 0, got {self.precipitation}")
        month = _MONTHS.get(self.time.strip().lower())
        if month is None:
            raise ScenarioInvalid(f"time must be a month name, got {self.time!r}")
        object.__setattr__(self, "time", month)
        try:
            object.__setattr__(self, "severity", parse_quantity(self.severity_text))
        except ValueError as exc:
            raise ScenarioInvalid(f"infestation severity: {exc}") from exc

    @property
    def infestation_severity(self) -> Quantity:
        return self.severity

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> PestScenario:
        missing = [k for k in ("Pest", "InfestationSeverity", "CropName") if k not in data]
        if missing:
            raise ScenarioInvalid(f"missing fields: {', '.join(missing)}")
        label = data.get(LABEL_FIELD)
        if label is not None and not isinstance(label, bool):
            if str(label).lower() not in ("true", "false"):
                raise ScenarioInvalid(f"{LABEL_FIELD} must be boolean, got {label!r}")
            label = str(label).lower() == "true"
        try:
            return cls(
                pest=str(data["Pest"]).strip(),
                severity_text=str(data["InfestationSeverity"]).strip(),
                crop_name=str(data["CropName"]).strip(),
                crop_growth_stage=str(data.get("CropGrowthStage", "")).strip(),
                temperature=_measure(data.get("Temperature", 0), "Temperature", ("", "°c", "c", "degc")),
                weather=str(data.get("Weather", "")).strip(),
                humidity=_measure(data.get("Humidity", 0), "Humidity", ("", "%")),
                precipitation=_measure(data.get("Precipitation", 0), "Precipitation", ("", "mm")),
                time=str(data.get("Time", "")).strip(),
                location=str(data.get("Location", "")).strip(),
                ground_truth_pmd=label,
                scenario_id=None if data.get(ID_FIELD) is None else str(data[ID_FIELD]),
            )
        except (TypeError, ArithmeticError) as exc:
            raise ScenarioInvalid(str(exc)) from exc

    def to_json(self, *, include_label: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.scenario_id is not None:
            out[ID_FIELD] = self.scenario_id
        out.update(
            {
                "Pest": self.pest,
                "InfestationSeverity": self.severity_text,
                "CropName": self.crop_name,
                "CropGrowthStage": self.crop_growth_stage,
                "Temperature": _json_number(self.temperature),
                "Weather": self.weather,
                "Humidity": _json_number(self.humidity),
                "Precipitation": _json_number(self.precipitation),
                "Time": self.time,
                "Location": self.location,
            }
        )
        if include_label and self.ground_truth_pmd is not None:
            out[LABEL_FIELD] = self.ground_truth_pmd
        return out

    def without_label(self) -> PestScenario:
        return replace(self, ground_truth_pmd=None)


@dataclass(frozen=True)
class Citation:
    publisher: str
    url: str
    title: str = ""
    doc_id: str = ""

    def __post_init__(self) -> None:
        for name in ("publisher", "url", "title", "doc_id"):
            object.__setattr__(self, name, str(getattr(self, name)).strip())
        if not self.publisher:
            raise ValueError("citation publisher must be non-empty")
        for name in ("publisher", "url", "title", "doc_id"):
            _single_line(name, getattr(self, name))
        if any(c in self.publisher for c in ":[]"):
            raise ValueError(f"publisher may not contain ':', '[' or ']': {self.publisher!r}")
        if any(c in self.title for c in "[]"):
            raise ValueError(f"citation title may not contain brackets: {self.title!r}")
        if any(c in self.url for c in "() \t"):
            raise ValueError(f"citation url may not contain spaces or parentheses: {self.url!r}")
        if any(c in self.doc_id for c in "() \t"):
            raise ValueError(f"doc id may not contain spaces or parentheses: {self.doc_id!r}")

    def to_json(self) -> dict[str, str]:
        return {"publisher": self.publisher, "url": self.url, "title": self.title, "doc_id": self.doc_id}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> Citation:
        return cls(
            publisher=str(data["publisher"]),
            url=str(data.get("url", "")),
            title=str(data.get("title", "")),
            doc_id=str(data.get("doc_id", "")),
        )


@dataclass(frozen=True)
class ThresholdRecord:
    pest: str
    crop_name: str
    threshold: Quantity
    source: Citation
    raw_text: str = ""

    def __post_init__(self) -> None:
        if self.threshold.value <= 0:
            raise ValueError(f"threshold value must be > 0, got {self.threshold.value}")
        for name in ("pest", "crop_name", "raw_text"):
            object.__setattr__(self, name, str(getattr(self, name)).strip())
        if not self.pest or not self.crop_name:
            raise ValueError("threshold pest and crop must be non-empty")
        for name in ("pest", "crop_name", "raw_text"):
            _single_line(name, getattr(self, name))

    def to_json(self) -> dict[str, Any]:
        return {
            "pest": self.pest,
            "crop": self.crop_name,
            "value": format_number(self.threshold.value),
            "unit": self.threshold.unit,
            "raw_text": self.raw_text,
            "source": self.source.to_json(),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> ThresholdRecord:
        return cls(
            pest=str(data["pest"]),
            crop_name=str(data["crop"]),
            threshold=Quantity(data["value"], str(data["unit"])),
            source=Citation.from_json(data["source"]),
            raw_text=str(data.get("raw_text", "")),
        )


@dataclass(frozen=True)
class PmdDecision:
    """A yes/no call on immediate action, with what it was based on.

    Decisions built by :func:`decide_pmd` always satisfy the strict-exceeds
    rule. Decisions read back from agent output may not (an editor can get the
    comparison wrong); :meth:`is_consistent` reports which case applies.
    """

    action_required: bool
    severity_used: Quantity
    threshold_used: ThresholdRecord | None
    rationale: str
    confidence: Confidence

    def __post_init__(self) -> None:
        object.__setattr__(self, "confidence", Confidence(self.confidence))
        object.__setattr__(self, "rationale", self.rationale.strip())
        _single_line("rationale", self.rationale)
        backed = self.confidence is Confidence.CORPUS_BACKED
        if backed != (self.threshold_used is not None):
            raise ValueError("confidence must be corpus-backed exactly when a threshold is used")

    def is_consistent(self, registry: UnitRegistry | None = None) -> bool:
        if self.threshold_used is None:
            return True
        try:
            normalize_units(self.severity_used.unit, self.threshold_used.threshold.unit, registry)
        except UnitMismatch:
            return False
        return self.action_required == (self.severity_used.value > self.threshold_used.threshold.value)


def decide_pmd(
    severity: Quantity, threshold: ThresholdRecord, registry: UnitRegistry | None = None
) -> PmdDecision:
    """Action is required iff severity strictly exceeds the threshold."""
    normalize_units(severity.unit, threshold.threshold.unit, registry)
    limit = threshold.threshold.value
    action = severity.value > limit
    verb = "exceeds" if action else "does not exceed"
    rationale = (
        f"Infestation severity {severity} {verb} the action threshold of "
        f"{threshold.threshold} ({threshold.source.publisher})"
    )
    if action:
        rationale += "; immediate management action is advised."
    elif severity.value >= limit * APPROACH_FRACTION:
        rationale += "; levels are approaching the threshold, so monitor closely and prepare to act."
    else:
        rationale += "; no immediate action is required."
    return PmdDecision(action, severity, threshold, rationale, Confidence.CORPUS_BACKED)


@dataclass(frozen=True)
class PmaDocument:
    """Structured pest management advice.

    ``sections`` is an ordered tuple of ``(name, body)`` pairs. The attribute
    list under "Pest Identification" and the decision lines under
    "Threshold Exceeded" are generated from ``scenario_echo`` and
    ``decision_block``; the stored bodies hold only the free text after them.
    """

    scenario_echo: PestScenario
    sections: tuple[tuple[str, str], ...]
    decision_block: PmdDecision
    stage: Stage
    citations: tuple[Citation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "sections", tuple((n, b.strip()) for n, b in self.sections))
        object.__setattr__(self, "citations", tuple(self.citations))
        if self.scenario_echo.ground_truth_pmd is not None:
            raise ValueError("scenario echo must not carry the ground-truth label")
        names = [n for n, _ in self.sections]
        if len(set(names)) != len(names):
            raise ValueError("duplicate section names")
        missing = [n for n in REQUIRED_SECTIONS if n not in names]
        if missing:
            raise ValueError(f"missing required sections: {missing}")
        for name, body in self.sections:
            if not name.strip() or name != name.strip() or "\n" in name:
                raise ValueError(f"bad section name {name!r}")
            if name == REFERENCES_SECTION:
                raise ValueError("References is generated from citations")
            for line in body.splitlines():
                if line.startswith("# ") or line.startswith("## ") or line in ("#", "##"):
                    raise ValueError(f"section {name!r} body contains a heading line")

    def section(self, name: str) -> str:
        for n, body in self.sections:
            if n == name:
                return body
        raise KeyError(name)

    def with_decision(self, decision: PmdDecision, stage: Stage | None = None) -> PmaDocument:
        return replace(self, decision_block=decision, stage=stage or self.stage)

    def with_section(self, name: str, body: str) -> PmaDocument:
        sections = tuple((n, body if n == name else b) for n, b in self.sections)
        if name not in dict(self.sections):
            sections += ((name, body),)
        return replace(self, sections=sections)

    def with_citations(self, extra: Iterable[Citation]) -> PmaDocument:
        merged = list(self.citations)
        for c in extra:
            if c not in merged:
                merged.append(c)
        return replace(self, citations=tuple(merged))
