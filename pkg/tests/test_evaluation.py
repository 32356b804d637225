from __future__ import annotations

import json
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pest_advisor.domain import ID_FIELD, LABEL_FIELD, PestScenario
from pest_advisor.errors import DatasetError, EmptyInput, LengthMismatch
from pest_advisor.evaluation import (
    Dataset,
    EvalReport,
    ScenarioRow,
    accuracy,
    evaluate,
    format_percent,
    load_dataset,
    workspace_name,
)
from pest_advisor.pipeline import FaultSpec
from pest_advisor.synthetic import plan_faults


def test_accuracy_examples():
    assert accuracy([True, False, True], [True, True, True]) == Fraction(2, 3)
    assert accuracy([False], [False]) == 1
    assert accuracy([True, None], [True, False]) == Fraction(1, 2)
    with pytest.raises(LengthMismatch):
        accuracy([True], [True, False])
    with pytest.raises(EmptyInput):
        accuracy([], [])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=300))
def test_accuracy_is_one_minus_hamming(pairs):
    preds, labels = zip(*pairs)
    hamming = sum(p != t for p, t in pairs)
    assert accuracy(preds, labels) == 1 - Fraction(hamming, len(pairs))


@pytest.mark.parametrize(
    "value, text",
    [(Fraction(59, 68), "86.8%"), (Fraction(63, 68), "92.6%"), (Fraction(1), "100.0%"),
     (Fraction(0), "0.0%"), (Fraction(1, 8), "12.5%"), (Fraction(1, 16), "6.3%"), (Fraction(2, 3), "66.7%")],
)
def test_format_percent(value, text):
    assert format_percent(value) == text


def test_format_percent_places():
    assert format_percent(Fraction(1, 3), places=0) == "33%"
    assert format_percent(Fraction(1, 3), places=3) == "33.333%"
    with pytest.raises(ValueError):
        format_percent(Fraction(-1, 2))


def _rows(bcn, n=3):
    return [bcn.to_json() | {ID_FIELD: f"s{i}"} for i in range(n)]


def test_load_dataset_roundtrip(tmp_path, bcn):
    path = tmp_path / "d.json"
    path.write_text(json.dumps(_rows(bcn)))
    data = load_dataset(path)
    assert len(data) == 3 and data.name == "d"
    rows = [bcn.to_json()]
    del rows[0][ID_FIELD]
    path.write_text(json.dumps(rows * 2))
    assert [s.scenario_id for s in load_dataset(path).scenarios] == ["row-001", "row-002"]


@pytest.mark.parametrize(
    "content, fragment",
    [(None, "not found"), ("{", "not valid JSON"), ("{}", "JSON array"), ("[]", "no scenarios"), ("[1]", "row 1")],
)
def test_load_dataset_errors(tmp_path, content, fragment):
    path = tmp_path / "d.json"
    if content is not None:
        path.write_text(content)
    with pytest.raises(DatasetError, match=fragment):
        load_dataset(path)


def test_load_dataset_names_the_bad_row(tmp_path, bcn):
    rows = _rows(bcn)
    rows[1]["Temperature"] = "warm"
    del rows[2][LABEL_FIELD]
    path = tmp_path / "d.json"
    path.write_text(json.dumps(rows))
    with pytest.raises(DatasetError) as info:
        load_dataset(path)
    assert info.value.row == 2
    rows[1] = rows[0] | {ID_FIELD: "s1"}
    path.write_text(json.dumps(rows))
    with pytest.raises(DatasetError) as info:
        load_dataset(path)
    assert info.value.row == 3


def test_duplicate_ids(bcn):
    with pytest.raises(DatasetError, match="duplicate"):
        Dataset((bcn, bcn))


def test_colliding_workspace_names(bcn, seed_corpus, scripted):
    a = PestScenario.from_json(bcn.to_json() | {ID_FIELD: "a/b"})
    b = PestScenario.from_json(bcn.to_json() | {ID_FIELD: "a b"})
    assert workspace_name("a/b") == workspace_name("a b")
    with pytest.raises(DatasetError, match="collide"):
        evaluate(Dataset((a, b)), seed_corpus, scripted)


def test_report_aggregation():
    rows = [
        ScenarioRow("b", True, True, True, "confirmed"),
        ScenarioRow("a", False, True, False, "corrected"),
        ScenarioRow("c", True, None, None, None, failed_stage="initial_pma", error="x"),
    ]
    report = EvalReport(tuple(rows))
    assert [r.scenario_id for r in report.rows] == ["a", "b", "c"]
    assert (report.stage1.n_correct, report.validated.n_correct, report.n_failed) == (1, 2, 1)
    assert report.verdict_counts() == {"confirmed": 1, "corrected": 1, "failed": 1}
    data = report.to_json()
    assert data["stage1"]["accuracy"] == "1/3"
    assert data["validated"]["percent"] == "66.7%"
    assert "| Stage 1: Editor + Retriever | 1 | 3 | 33.3% |" in report.to_markdown()
    with pytest.raises(EmptyInput):
        EvalReport(())


def test_evaluate_rows_reaggregate(synthetic, scripted, tmp_path):
    plan = plan_faults(synthetic.dataset, 9, seed=0)
    report = evaluate(synthetic.dataset, synthetic.corpus, scripted, FaultSpec(targets=set(plan.flips)),
                      workspace_root=tmp_path)
    assert report.stage1.n_correct == sum(r.stage1_pmd == r.truth for r in report.rows)
    assert report.validated.n_correct == sum(r.validated_pmd == r.truth for r in report.rows)
    assert (report.stage1.percent, report.validated.percent) == ("86.8%", "100.0%")
    flipped = {r.scenario_id for r in report.rows if r.verdict == "corrected"}
    assert flipped == set(plan.flips)
    assert len(list(tmp_path.iterdir())) == 68
    assert report.config["fault"]["targets"] == sorted(plan.flips)


def test_evaluate_counts_failures_as_wrong(synthetic, scripted):
    from pest_advisor.llm.scripted import ScriptedBackend, task_kind
    from pest_advisor.agents import TaskKind

    victim = synthetic.dataset.scenarios[0]

    class Broken(ScriptedBackend):
        def complete(self, exchange, agent=None):
            if task_kind(exchange) is TaskKind.VALIDATE_THRESHOLD and victim.pest in exchange.text():
                raise RuntimeError("validator down")
            return super().complete(exchange, agent)

    report = evaluate(synthetic.dataset, synthetic.corpus, scripted, backend=Broken())
    row = next(r for r in report.rows if r.scenario_id == victim.scenario_id)
    assert row.failed_stage == "validate_threshold"
    assert row.stage1_pmd == row.truth and not row.stage1_correct
    assert report.n_failed >= 1
    assert report.validated.n_correct == 68 - report.n_failed


def test_more_flips_never_help(synthetic, scripted):
    ids = sorted(s.scenario_id for s in synthetic.dataset.scenarios)
    rng = random.Random(3)
    order = rng.sample(ids, 12)
    previous = None
    for k in (0, 4, 8, 12):
        report = evaluate(synthetic.dataset, synthetic.corpus, scripted, FaultSpec(targets=set(order[:k])))
        if previous is not None:
            assert report.stage1.n_correct <= previous.stage1.n_correct
        assert report.validated.n_correct == 68
        previous = report
