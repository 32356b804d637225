"""Decision accuracy at the two measurement points, over a labelled dataset."""

from __future__ import annotations

import json
import logging
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from .domain import ID_FIELD, LABEL_FIELD, PestScenario
from .errors import (
    AdvisorError,
    DatasetError,
    EmptyInput,
    LengthMismatch,
    StageFailure,
)
from .knowledge import Corpus, SearchProvider
from .llm import Backend, BackendConfig, make_backend
from .pipeline import NO_FAULTS, FaultSpec, Pipeline, extract_final_pmd, extract_stage1_pmd
from .workspace import Workspace, workspace_digest

logger = logging.getLogger(__name__)

STAGE1_LABEL = "Stage 1: Editor + Retriever"
VALIDATED_LABEL = "Stage 2: after Validator"


def accuracy(predictions: Sequence[bool], labels: Sequence[bool]) -> Fraction:
    """Exact share of positions where prediction and label agree."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise EmptyInput("accuracy needs at least one labelled item")
    hits = sum(1 for p, t in zip(predictions, labels) if p is not None and bool(p) == bool(t))
    return Fraction(hits, len(labels))


def format_percent(value: Fraction | int | float, places: int = 1) -> str:
    """Percentage rounded half-up to ``places`` decimals, e.g. 59/68 -> '86.8%'."""
    frac = Fraction(value)
    if frac < 0:
        raise ValueError("percent of a negative ratio")
    scale = 10**places
    scaled = frac * 100 * scale
    units = (scaled.numerator * 2 + scaled.denominator) // (2 * scaled.denominator)
    whole, rest = divmod(units, scale)
    return f"{whole}.{rest:0{places}d}%" if places else f"{whole}%"


# -- dataset ------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    scenarios: tuple[PestScenario, ...]
    name: str = "dataset"
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise DatasetError("dataset has no scenarios")
        seen: set[str] = set()
        for i, s in enumerate(self.scenarios, start=1):
            if s.ground_truth_pmd is None:
                raise DatasetError(f"scenario is missing {LABEL_FIELD}", row=i)
            if not s.scenario_id:
                raise DatasetError(f"scenario is missing {ID_FIELD}", row=i)
            if s.scenario_id in seen:
                raise DatasetError(f"duplicate {ID_FIELD} {s.scenario_id!r}", row=i)
            seen.add(s.scenario_id)

    def __len__(self) -> int:
        return len(self.scenarios)

    def to_json(self) -> list[dict[str, Any]]:
        return [s.to_json() for s in self.scenarios]

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    """Read a JSON array of labelled scenarios. Rows are numbered from 1 in errors."""
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"dataset file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"dataset is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(data, list):
        raise DatasetError("dataset must be a JSON array of scenario objects")
    if not data:
        raise DatasetError("dataset has no scenarios")
    scenarios = []
    for i, row in enumerate(data, start=1):
        if not isinstance(row, dict):
            raise DatasetError("row is not an object", row=i)
        try:
            scenario = PestScenario.from_json(row)
        except (AdvisorError, ValueError) as exc:
            raise DatasetError(str(exc), row=i) from exc
        if scenario.scenario_id is None:
            scenario = PestScenario.from_json({**row, ID_FIELD: f"row-{i:03d}"})
        scenarios.append(scenario)
    return Dataset(tuple(scenarios), name=name or p.stem, source=str(p))


# -- report -----------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioRow:
    scenario_id: str
    truth: bool
    stage1_pmd: bool | None
    validated_pmd: bool | None
    verdict: str | None
    failed_stage: str | None = None
    error: str | None = None
    digest: str = ""

    @property
    def stage1_correct(self) -> bool:
        return self.failed_stage is None and self.stage1_pmd == self.truth

    @property
    def validated_correct(self) -> bool:
        return self.failed_stage is None and self.validated_pmd == self.truth

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.scenario_id,
            "truth": self.truth,
            "stage1_pmd": self.stage1_pmd,
            "validated_pmd": self.validated_pmd,
            "verdict": self.verdict,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "workspace_digest": self.digest,
        }


@dataclass(frozen=True)
class StageScore:
    n_correct: int
    n_total: int

    @property
    def accuracy(self) -> Fraction:
        return Fraction(self.n_correct, self.n_total)

    @property
    def percent(self) -> str:
        return format_percent(self.accuracy)


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ScenarioRow, ...]
    config: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: r.scenario_id)))
        if not self.rows:
            raise EmptyInput("report has no rows")

    @property
    def n_total(self) -> int:
        return len(self.rows)

    @property
    def stage1(self) -> StageScore:
        return StageScore(sum(r.stage1_correct for r in self.rows), self.n_total)

    @property
    def validated(self) -> StageScore:
        return StageScore(sum(r.validated_correct for r in self.rows), self.n_total)

    @property
    def n_failed(self) -> int:
        return sum(r.failed_stage is not None for r in self.rows)

    def verdict_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.rows:
            key = r.verdict or "failed"
            counts[key] = counts.get(key, 0) + 1
        return dict(sorted(counts.items()))

    def to_json(self) -> dict[str, Any]:
        def stage(score: StageScore) -> dict[str, Any]:
            acc = score.accuracy
            return {
                "n_correct": score.n_correct,
                "accuracy": f"{acc.numerator}/{acc.denominator}",
                "accuracy_float": float(acc),
                "percent": score.percent,
            }

        return {
            "n_total": self.n_total,
            "n_failed": self.n_failed,
            "stage1": stage(self.stage1),
            "validated": stage(self.validated),
            "verdicts": self.verdict_counts(),
            "config": self.config,
            "rows": [r.to_json() for r in self.rows],
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| Measurement | Correct | Total | Accuracy |",
            "|---|---:|---:|---:|",
            f"| {STAGE1_LABEL} | {self.stage1.n_correct} | {self.n_total} | {self.stage1.percent} |",
            f"| {VALIDATED_LABEL} | {self.validated.n_correct} | {self.n_total} | {self.validated.percent} |",
        ]
        return "\n".join(lines) + "\n"

    def to_plain(self) -> str:
        return (
            f"{STAGE1_LABEL}: {self.stage1.percent} ({self.stage1.n_correct}/{self.n_total})\n"
            f"{VALIDATED_LABEL}: {self.validated.percent} ({self.validated.n_correct}/{self.n_total})\n"
            f"failed runs: {self.n_failed}\n"
        )


# -- evaluation --------------------------------------------------------------------------


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def workspace_name(scenario_id: str) -> str:
    name = _UNSAFE.sub("_", scenario_id).strip("._") or "scenario"
    return name


def _evaluate_one(pipeline: Pipeline, scenario: PestScenario, root: Path) -> ScenarioRow:
    ws_root = root / workspace_name(scenario.scenario_id or "scenario")
    truth = bool(scenario.ground_truth_pmd)
    try:
        trace = pipeline.run(scenario.without_label(), ws_root)
    except StageFailure as exc:
        stage1 = None
        try:
            stage1 = extract_stage1_pmd(Workspace(ws_root)).action_required
        except AdvisorError:
            pass
        logger.warning("scenario %s failed at %s: %s", scenario.scenario_id, exc.stage, exc.cause)
        return ScenarioRow(
            scenario.scenario_id or "", truth, stage1, None, None,
            failed_stage=exc.stage, error=f"{type(exc.cause).__name__}: {exc.cause}",
            digest=workspace_digest(ws_root),
        )
    ws = Workspace(ws_root)
    return ScenarioRow(
        scenario.scenario_id or "",
        truth,
        extract_stage1_pmd(ws).action_required,
        extract_final_pmd(ws).action_required,
        trace.validator_verdict,
        digest=workspace_digest(ws_root),
    )


def evaluate(
    dataset: Dataset,
    corpus: Corpus | SearchProvider,
    backend_config: BackendConfig,
    fault_spec: FaultSpec = NO_FAULTS,
    seed: int = 0,
    *,
    workspace_root: str | Path | None = None,
    workers: int = 4,
    backend: Backend | None = None,
) -> EvalReport:
    """Run the full pipeline for every scenario and score both measurement points.

    A scenario whose pipeline fails is kept as a row counted wrong at both points.
    Without ``workspace_root`` the per-scenario workspaces live in a temporary
    directory that is removed afterwards.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    names = [workspace_name(s.scenario_id or "") for s in dataset.scenarios]
    if len(set(names)) != len(names):
        raise DatasetError("scenario ids collide once made safe for use as directory names")
    backend = backend or make_backend(backend_config)
    pipeline = Pipeline(
        backend,
        corpus,
        fault=fault_spec,
        seed=seed,
        temperature=backend_config.temperature,
        max_output=backend_config.max_output,
    )
    config = {
        "dataset": dataset.name,
        "backend": backend_config.kind.value,
        "model": backend_config.model_name,
        "corpus_digest": corpus.digest() if isinstance(corpus, Corpus) else type(corpus).__name__,
        "fault": fault_spec.to_json(),
        "seed": seed,
    }

    def run_all(root: Path) -> list[ScenarioRow]:
        root.mkdir(parents=True, exist_ok=True)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: _evaluate_one(pipeline, s, root), dataset.scenarios))

    if workspace_root is None:
        with tempfile.TemporaryDirectory(prefix="pest-eval-") as tmp:
            rows = run_all(Path(tmp))
    else:
        rows = run_all(Path(workspace_root))
    return EvalReport(tuple(rows), config)


__all__ = [
    "Dataset",
    "EvalReport",
    "ScenarioRow",
    "StageScore",
    "accuracy",
    "evaluate",
    "format_percent",
    "load_dataset",
]
