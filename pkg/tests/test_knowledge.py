from __future__ import annotations

import json
import math
import re
from collections import Counter
from decimal import Decimal

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pest_advisor.errors import CorpusNotFound, MalformedDoc
from pest_advisor.knowledge import Corpus, KnowledgeDoc, RemoteSearch, load_corpus


def doc(doc_id, body, title="", publisher="AHDB", thresholds=()):
    return KnowledgeDoc.from_json(
        {
            "doc_id": doc_id,
            "publisher": publisher,
            "title": title,
            "url": f"corpus://t/{doc_id}",
            "body": body,
            "thresholds": list(thresholds),
        }
    )


def oracle_scores(docs, query):
    """Scores computed from scratch: sum over unique query words of (1 + ln tf) * ln(1 + 1/df)."""
    words = lambda text: re.findall(r"[a-z0-9]+", text.lower())  # noqa: E731
    bags = {d.doc_id: Counter(words(d.title + " " + d.body)) for d in docs}
    df = Counter(w for bag in bags.values() for w in bag)
    out = {}
    for doc_id, bag in bags.items():
        total = 0.0
        for w in sorted(set(words(query))):
            if bag[w]:
                total += (1 + math.log(bag[w])) * math.log(1 + 1 / df[w])
        out[doc_id] = total
    return out


def oracle_ranking(docs, query, k):
    scores = oracle_scores(docs, query)
    ranked = sorted((d for d in scores if scores[d] > 0), key=lambda d: (-scores[d], d))
    return ranked[:k], scores


# -- loading ---------------------------------------------------------------------


def write_docs(directory, docs):
    directory.mkdir(parents=True, exist_ok=True)
    for d in docs:
        (directory / f"{d['doc_id']}.json").write_text(json.dumps(d))


RAW = [
    {"doc_id": f"d{i}", "publisher": "AHDB", "title": f"T{i}", "url": f"u{i}", "body": "text"} for i in range(3)
]


def test_load_three_docs(tmp_path):
    write_docs(tmp_path, RAW)
    assert len(load_corpus(tmp_path)) == 3


def test_empty_directory_is_an_empty_corpus(tmp_path):
    corpus = load_corpus(tmp_path)
    assert len(corpus) == 0
    assert corpus.lookup_threshold("Beet Cyst Nematode", "Sugar Beet") is None
    assert corpus.search("anything") == []


def test_missing_directory(tmp_path):
    with pytest.raises(CorpusNotFound):
        load_corpus(tmp_path / "nope")


@pytest.mark.parametrize("value", ["0", "-2"])
def test_non_positive_threshold_is_malformed(tmp_path, value):
    bad = dict(RAW[0], thresholds=[{"pest": "P", "crop": "C", "value": value, "unit": "aphids/tiller"}])
    write_docs(tmp_path, [bad])
    with pytest.raises(MalformedDoc) as info:
        load_corpus(tmp_path)
    assert info.value.path.endswith("d0.json")


def test_broken_json_and_duplicate_ids(tmp_path):
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(MalformedDoc):
        load_corpus(tmp_path)
    other = tmp_path / "dup"
    write_docs(other, [RAW[0]])
    (other / "copy.json").write_text(json.dumps(RAW[0]))
    with pytest.raises(MalformedDoc):
        load_corpus(other)


def test_corpus_write_round_trip(tmp_path, seed_corpus):
    seed_corpus.write(tmp_path / "out")
    again = load_corpus(tmp_path / "out")
    assert again.digest() == seed_corpus.digest()
    assert again == seed_corpus


# -- lookup ----------------------------------------------------------------------


def test_lookup_seed_thresholds(seed_corpus):
    bcn = seed_corpus.lookup_threshold("Beet Cyst Nematode", "Sugar Beet")
    assert (bcn.threshold.value, bcn.threshold.unit, bcn.source.publisher) == (
        Decimal(2), "eggs-and-larvae/gram-soil", "AHDB"
    )
    assert "relevant soil volume" in bcn.raw_text
    fln = seed_corpus.lookup_threshold("Free-Living Nematodes", "Sugar Beet")
    assert (fln.threshold.value, fln.threshold.unit, fln.source.publisher) == (
        Decimal(1000), "nematodes/litre-soil", "AHDB"
    )
    assert seed_corpus.lookup_threshold("Unicorn Moth", "Sugar Beet") is None


def test_lookup_normalises_case_and_whitespace(seed_corpus):
    assert seed_corpus.lookup_threshold("  beet   cyst NEMATODE ", "sugar  beet") is not None


def test_lookup_tie_break_is_smallest_doc_id():
    t = lambda v: {"pest": "P", "crop": "C", "value": v, "unit": "aphids/tiller"}  # noqa: E731
    corpus = Corpus((doc("zz", "x", thresholds=[t("9")]), doc("aa", "x", thresholds=[t("3")])))
    assert corpus.lookup_threshold("p", "c").threshold.value == 3


def test_without_thresholds_keeps_documents(seed_corpus):
    trimmed = seed_corpus.without_thresholds([("Beet Cyst Nematode", "Sugar Beet")])
    assert len(trimmed) == len(seed_corpus)
    assert trimmed.lookup_threshold("Beet Cyst Nematode", "Sugar Beet") is None
    assert trimmed.lookup_threshold("Free-Living Nematodes", "Sugar Beet") is not None


# -- search ----------------------------------------------------------------------


def test_seed_search_matches_oracle(seed_corpus):
    for query in [
        "Beet Cyst Nematode threshold Sugar Beet",
        "free living nematodes sugar beet threshold",
        "integrated pest management",
        "soil sampling",
    ]:
        expected, scores = oracle_ranking(seed_corpus.docs, query, 5)
        results = seed_corpus.search(query, 5)
        assert [r.doc_id for r in results] == expected
        for r in results:
            assert r.score == pytest.approx(scores[r.doc_id], rel=1e-12)


def test_bcn_query_ranks_bcn_doc_first(seed_corpus):
    assert seed_corpus.search("Beet Cyst Nematode threshold Sugar Beet")[0].doc_id == "ahdb-beet-cyst-nematode"


def test_free_living_snippet(seed_corpus):
    top = seed_corpus.search("free living nematodes sugar beet threshold", 5)[0]
    assert top.doc_id == "ahdb-free-living-nematodes"
    assert "1,000 nematodes per litre" in top.snippet


def test_no_shared_token_gives_no_results(seed_corpus):
    assert seed_corpus.search("zyzzyva quokka") == []


def test_identical_docs_order_by_id():
    corpus = Corpus((doc("b", "aphid threshold wheat"), doc("a", "aphid threshold wheat")))
    assert [r.doc_id for r in corpus.search("aphid")] == ["a", "b"]


def test_k_must_be_positive(seed_corpus):
    with pytest.raises(ValueError):
        seed_corpus.search("beet", 0)


def test_search_is_pure(seed_corpus):
    assert seed_corpus.search("nematode beet", 3) == seed_corpus.search("nematode beet", 3)


vocab = ["aphid", "beet", "wheat", "threshold", "slug", "nematode", "soil", "trap", "moth", "rape"]
texts = st.lists(st.sampled_from(vocab), min_size=1, max_size=12).map(" ".join)


@settings(max_examples=150, deadline=None)
@given(st.lists(texts, min_size=1, max_size=8), texts, st.integers(1, 8))
def test_search_matches_oracle_on_random_corpora(bodies, query, k):
    docs = [doc(f"d{i:02d}", b) for i, b in enumerate(bodies)]
    corpus = Corpus(tuple(docs))
    expected, scores = oracle_ranking(docs, query, k)
    results = corpus.search(query, k)
    assert [r.doc_id for r in results] == expected
    assert all(a.score >= b.score for a, b in zip(results, results[1:]))


@settings(max_examples=150, deadline=None)
@given(st.lists(texts, min_size=1, max_size=8), texts, st.lists(st.sampled_from(["zeta", "omega", "kappa"]), min_size=1))
def test_irrelevant_document_does_not_reorder(bodies, query, junk):
    corpus = Corpus(tuple(doc(f"d{i:02d}", b) for i, b in enumerate(bodies)))
    before = [(r.doc_id, r.score) for r in corpus.search(query, 20)]
    bigger = corpus.with_docs([doc("irrelevant", " ".join(junk))])
    after = [(r.doc_id, r.score) for r in bigger.search(query, 20)]
    assert after == before


# -- remote search ----------------------------------------------------------------


def test_remote_search_parses_and_sorts():
    payload = {
        "results": [
            {"doc_id": "b", "score": 1.0, "snippet": "s", "publisher": "AHDB", "title": "t", "url": "u"},
            {
                "doc_id": "a",
                "score": 2.0,
                "snippet": "s",
                "publisher": "AHDB",
                "title": "t",
                "url": "u",
                "thresholds": [{"pest": "P", "crop": "C", "value": "3", "unit": "aphids/tiller"}],
            },
        ]
    }
    seen = {}

    def handler(request):
        seen.update(dict(request.url.params))
        return httpx.Response(200, json=payload)

    search = RemoteSearch("http://search.invalid/q", client=httpx.Client(transport=httpx.MockTransport(handler)))
    results = search.search("aphid", 5)
    assert [r.doc_id for r in results] == ["a", "b"]
    assert results[0].thresholds[0].threshold.value == 3
    assert seen == {"q": "aphid", "k": "5"}
