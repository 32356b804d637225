"""Local guidance corpus: threshold lookup and ranked lexical search.

The corpus stands in for the online guidance publishers an agent would
otherwise query. A remote HTTP search provider with the same interface is
available for deployments that have one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .domain import Citation, ThresholdRecord
from .errors import BackendConfigError, CorpusNotFound, MalformedDoc, RemoteRefusal
from .units import Quantity

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[a-z0-9]+")
_SENTENCE = re.compile(r"(?<=[.!?])\s+")
SNIPPET_MAX = 400


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _norm_name(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    publisher: str
    title: str
    url: str
    body: str
    threshold_records: tuple[ThresholdRecord, ...] = ()

    def __post_init__(self) -> None:
        if not self.doc_id.strip():
            raise ValueError("doc_id must be non-empty")
        if not self.publisher.strip():
            raise ValueError("publisher must be non-empty")

    @property
    def citation(self) -> Citation:
        return Citation(self.publisher, self.url, self.title, self.doc_id)

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> KnowledgeDoc:
        for key in ("doc_id", "publisher", "title", "url", "body"):
            if not isinstance(data.get(key), str):
                raise ValueError(f"field {key!r} must be a string")
        source = Citation(data["publisher"], data["url"], data["title"], data["doc_id"])
        records = []
        for i, t in enumerate(data.get("thresholds", [])):
            try:
                records.append(
                    ThresholdRecord(
                        pest=str(t["pest"]),
                        crop_name=str(t["crop"]),
                        threshold=Quantity(t["value"], str(t["unit"])),
                        source=source,
                        raw_text=str(t.get("raw_text", "")),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"thresholds[{i}]: {exc}") from exc
        return cls(
            doc_id=data["doc_id"],
            publisher=data["publisher"],
            title=data["title"],
            url=data["url"],
            body=data["body"],
            threshold_records=tuple(records),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "publisher": self.publisher,
            "title": self.title,
            "url": self.url,
            "body": self.body,
            "thresholds": [
                {k: v for k, v in r.to_json().items() if k != "source"} for r in self.threshold_records
            ],
        }


@dataclass(frozen=True)
class SearchResult:
    doc_id: str
    score: float
    snippet: str
    publisher: str = ""
    title: str = ""
    url: str = ""
    thresholds: tuple[ThresholdRecord, ...] = ()

    @property
    def citation(self) -> Citation:
        return Citation(self.publisher or "unknown", self.url, self.title, self.doc_id)


class SearchProvider(Protocol):
    def search(self, query: str, k: int = 5) -> list[SearchResult]: ...


@dataclass(frozen=True)
class _Indexed:
    doc: KnowledgeDoc
    tf: Mapping[str, int]
    sentences: tuple[tuple[str, frozenset[str]], ...]


@dataclass(frozen=True)
class Corpus:
    """Immutable set of guidance documents indexed for search."""

    docs: tuple[KnowledgeDoc, ...]
    _index: tuple[_Indexed, ...] = field(init=False, repr=False, compare=False)
    _df: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        docs = tuple(sorted(self.docs, key=lambda d: d.doc_id))
        ids = [d.doc_id for d in docs]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValueError(f"duplicate doc ids: {dupes}")
        object.__setattr__(self, "docs", docs)
        index, df = [], Counter()
        for doc in docs:
            tf = Counter(tokenize(f"{doc.title} {doc.body}"))
            df.update(tf.keys())
            sentences = tuple(
                (s.strip(), frozenset(tokenize(s))) for s in _SENTENCE.split(doc.body) if s.strip()
            )
            index.append(_Indexed(doc, dict(tf), sentences))
        object.__setattr__(self, "_index", tuple(index))
        object.__setattr__(self, "_df", dict(df))

    def __len__(self) -> int:
        return len(self.docs)

    def get(self, doc_id: str) -> KnowledgeDoc | None:
        for doc in self.docs:
            if doc.doc_id == doc_id:
                return doc
        return None

    def idf(self, token: str) -> float:
        """Inverse document frequency, ``ln(1 + 1/df)``.

        It depends on the token's document frequency only, so adding documents
        that share no token with a query leaves that query's scores unchanged.
        """
        df = self._df.get(token, 0)
        return math.log1p(1.0 / df) if df else 0.0

    def score(self, query: str, doc_id: str) -> float:
        for entry in self._index:
            if entry.doc.doc_id == doc_id:
                return self._score(sorted(set(tokenize(query))), entry)
        raise KeyError(doc_id)

    def _score(self, terms: Sequence[str], entry: _Indexed) -> float:
        total = 0.0
        for term in terms:
            count = entry.tf.get(term, 0)
            if count:
                total += (1.0 + math.log(count)) * self.idf(term)
        return total

    def _snippet(self, terms: Sequence[str], entry: _Indexed) -> str:
        term_set = set(terms)
        best, best_key = "", (0, 0.0)
        for sentence, tokens in entry.sentences:
            hits = tokens & term_set
            key = (len(hits), sum(self.idf(t) for t in sorted(hits)))
            if key > best_key:
                best, best_key = sentence, key
        text = best or entry.doc.title
        return text if len(text) <= SNIPPET_MAX else text[: SNIPPET_MAX - 3].rstrip() + "..."

    def search(self, query: str, k: int = 5) -> list[SearchResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        terms = sorted(set(tokenize(query)))
        scored = []
        for entry in self._index:
            s = self._score(terms, entry)
            if s > 0:
                scored.append((-s, entry.doc.doc_id, entry))
        scored.sort(key=lambda x: (x[0], x[1]))
        return [
            SearchResult(
                doc_id=entry.doc.doc_id,
                score=-neg,
                snippet=self._snippet(terms, entry),
                publisher=entry.doc.publisher,
                title=entry.doc.title,
                url=entry.doc.url,
                thresholds=entry.doc.threshold_records,
            )
            for neg, _, entry in scored[:k]
        ]

    def lookup_threshold(self, pest: str, crop: str) -> ThresholdRecord | None:
        """Exact (case- and whitespace-insensitive) match; smallest doc_id wins."""
        key = (_norm_name(pest), _norm_name(crop))
        for doc in self.docs:  # sorted by doc_id
            for record in doc.threshold_records:
                if (_norm_name(record.pest), _norm_name(record.crop_name)) == key:
                    return record
        return None

    def without_thresholds(self, pairs: Iterable[tuple[str, str]]) -> Corpus:
        """Copy with threshold records for the given (pest, crop) pairs dropped."""
        drop = {(_norm_name(p), _norm_name(c)) for p, c in pairs}
        docs = []
        for doc in self.docs:
            kept = tuple(
                r for r in doc.threshold_records
                if (_norm_name(r.pest), _norm_name(r.crop_name)) not in drop
            )
            if len(kept) != len(doc.threshold_records):
                doc = KnowledgeDoc(doc.doc_id, doc.publisher, doc.title, doc.url, doc.body, kept)
            docs.append(doc)
        return Corpus(tuple(docs))

    def with_docs(self, extra: Iterable[KnowledgeDoc]) -> Corpus:
        return Corpus(self.docs + tuple(extra))

    def digest(self) -> str:
        payload = json.dumps([d.to_json() for d in self.docs], sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def write(self, directory: str | Path) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for doc in self.docs:
            (out / f"{doc.doc_id}.json").write_text(
                json.dumps(doc.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
            )


def same_pair(record: ThresholdRecord, pest: str, crop: str) -> bool:
    return (_norm_name(record.pest), _norm_name(record.crop_name)) == (_norm_name(pest), _norm_name(crop))


def load_corpus(path: str | Path) -> Corpus:
    root = Path(path)
    if not root.is_dir():
        raise CorpusNotFound(f"corpus directory not found: {root}")
    docs = []
    for file in sorted(root.glob("*.json")):
        try:
            data = json.loads(file.read_text(encoding="utf-8"))
            docs.append(KnowledgeDoc.from_json(data))
        except (OSError, ValueError, TypeError) as exc:
            raise MalformedDoc(str(file), exc) from exc
    try:
        return Corpus(tuple(docs))
    except ValueError as exc:
        raise MalformedDoc(str(root), exc) from exc


def bundled_corpus_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("pest_advisor") / "data" / "corpus"))


def load_seed_corpus() -> Corpus:
    return load_corpus(bundled_corpus_path())


class RemoteSearch:
    """HTTP search provider.

    Expects ``GET <endpoint>?q=<query>&k=<k>`` to return
    ``{"results": [{"doc_id", "score", "snippet", "publisher", "title", "url",
    "thresholds": [...]}]}``. Results are re-sorted locally so the ordering
    contract matches the local corpus.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        api_key_env: str | None = None,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        if not endpoint:
            raise BackendConfigError("remote search requires an endpoint")
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def search(self, query: str, k: int = 5) -> list[SearchResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        headers = {}
        if self.api_key_env and os.environ.get(self.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
        resp = self._client.get(self.endpoint, params={"q": query, "k": k}, headers=headers)
        if resp.status_code // 100 != 2:
            raise RemoteRefusal(resp.status_code, resp.text)
        results = []
        for item in resp.json().get("results", []):
            source = Citation(item.get("publisher") or "unknown", item.get("url", ""), item.get("title", ""), item["doc_id"])
            thresholds = tuple(
                ThresholdRecord(t["pest"], t["crop"], Quantity(t["value"], t["unit"]), source, t.get("raw_text", ""))
                for t in item.get("thresholds", [])
            )
            results.append(
                SearchResult(
                    doc_id=item["doc_id"],
                    score=float(item.get("score", 0.0)),
                    snippet=item.get("snippet", ""),
                    publisher=source.publisher,
                    title=source.title,
                    url=source.url,
                    thresholds=thresholds,
                )
            )
        results.sort(key=lambda r: (-r.score, r.doc_id))
        return results[:k]
