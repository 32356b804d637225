"""Pest management advice drafted, customised and validated by three cooperating agents."""

from __future__ import annotations

from .domain import (
    Citation,
    Confidence,
    PestScenario,
    PmaDocument,
    PmdDecision,
    Stage,
    ThresholdRecord,
    decide_pmd,
)
from .evaluation import Dataset, EvalReport, accuracy, evaluate, format_percent, load_dataset
from .knowledge import Corpus, KnowledgeDoc, load_corpus, load_seed_corpus
from .llm import BackendConfig
from .pipeline import FaultSpec, Pipeline, PipelineTrace, extract_final_pmd, extract_stage1_pmd, run_pipeline
from .pma_markdown import parse_pma_markdown, render_pma_markdown
from .synthetic import SyntheticSpec, generate_synthetic, generate_synthetic_dataset
from .units import Quantity, normalize_units, parse_quantity

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "Citation",
    "Confidence",
    "Corpus",
    "Dataset",
    "EvalReport",
    "FaultSpec",
    "KnowledgeDoc",
    "PestScenario",
    "Pipeline",
    "PipelineTrace",
    "PmaDocument",
    "PmdDecision",
    "Quantity",
    "Stage",
    "SyntheticSpec",
    "ThresholdRecord",
    "accuracy",
    "decide_pmd",
    "evaluate",
    "extract_final_pmd",
    "extract_stage1_pmd",
    "format_percent",
    "generate_synthetic",
    "generate_synthetic_dataset",
    "load_corpus",
    "load_dataset",
    "load_seed_corpus",
    "normalize_units",
    "parse_pma_markdown",
    "parse_quantity",
    "render_pma_markdown",
    "run_pipeline",
]
