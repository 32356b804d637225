from __future__ import annotations

import re
from importlib import resources

import pytest
from hypothesis import HealthCheck, given, settings

from pest_advisor.domain import REQUIRED_SECTIONS, Confidence, PmaDocument, PmdDecision, Stage
from pest_advisor.errors import DuplicateSection, MissingDecisionMarker, MissingSection, PmaParseError
from pest_advisor.pma_markdown import (
    flip_marker,
    format_citation,
    parse_citation,
    parse_pma_markdown,
    read_marker,
    render_pma_markdown,
)
from pma_strategies import citations, documents


@pytest.fixture
def bcn_doc(bcn) -> PmaDocument:
    return PmaDocument(
        scenario_echo=bcn.without_label(),
        sections=tuple((n, f"Body of {n.lower()}.") for n in REQUIRED_SECTIONS),
        decision_block=PmdDecision(False, bcn.severity, None, "Low count.", Confidence.MODEL_ESTIMATED),
        stage=Stage.INITIAL,
    )


def test_canonical_layout(bcn_doc):
    text = render_pma_markdown(bcn_doc)
    h2 = re.findall(r"^## (.+)$", text, re.MULTILINE)
    assert h2 == list(REQUIRED_SECTIONS)
    assert re.search(r"^PMD: false$", text, re.MULTILINE)
    assert text.startswith("# ")
    assert parse_pma_markdown(text) == bcn_doc


def test_empty_text_is_missing_sections():
    with pytest.raises(MissingSection):
        parse_pma_markdown("")


def test_duplicate_section(bcn_doc):
    text = render_pma_markdown(bcn_doc) + "\n## Threshold Exceeded\nPMD: true\n"
    with pytest.raises(DuplicateSection):
        parse_pma_markdown(text)


def test_missing_marker(bcn_doc):
    text = render_pma_markdown(bcn_doc).replace("PMD: false\n", "")
    with pytest.raises(MissingDecisionMarker):
        parse_pma_markdown(text)


def test_missing_one_section(bcn_doc):
    text = render_pma_markdown(bcn_doc).replace("## Preventative Measures", "## Prevention")
    with pytest.raises(MissingSection):
        parse_pma_markdown(text)


def test_parse_errors_share_a_base():
    assert issubclass(MissingSection, PmaParseError)
    assert issubclass(DuplicateSection, PmaParseError)


def test_bundled_example_template_parses():
    text = (resources.files("pest_advisor") / "data" / "example" / "pma.md").read_text(encoding="utf-8")
    doc = parse_pma_markdown(text)
    assert doc.stage is Stage.INITIAL
    assert doc.decision_block.confidence is Confidence.MODEL_ESTIMATED
    assert parse_pma_markdown(render_pma_markdown(doc)) == doc


def test_marker_flip(bcn_doc):
    text = render_pma_markdown(bcn_doc)
    assert read_marker(text) is False
    flipped = flip_marker(text)
    assert read_marker(flipped) is True
    assert flip_marker(flipped) == text


@given(citations)
def test_citation_line_round_trip(c):
    assert parse_citation(format_citation(c)) == c


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(documents())
def test_round_trip_property(doc):
    text = render_pma_markdown(doc)
    assert parse_pma_markdown(text) == doc
    # Rendering is canonical: a second pass is byte-identical.
    assert render_pma_markdown(parse_pma_markdown(text)) == text
