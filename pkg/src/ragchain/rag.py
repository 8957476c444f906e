"""Per-question retrieval engine: corpus views, lexical retrieval, observation generation.

Corpora are small enough for exhaustive scoring, so there is no index
persistence: every view is scored in full on each query.
"""
from __future__ import annotations

import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Protocol, Sequence

from .backends import Backend, EmbedFn, complete
from .errors import RagchainError
from .prompts import OBSERVATION_PROMPT

if TYPE_CHECKING:
    from .pipeline import QAExample

log = logging.getLogger(__name__)

DEFAULT_RETRIEVAL_K = 5

GOLD = "gold"
DISTRACTOR = "distractor"


class EmptyCorpus(RagchainError):
    pass


class PoolExhausted(RagchainError):
    pass


@dataclass(frozen=True)
class Document:
    """One passage. The label states its role for its own source question."""

    id: str
    title: str
    body: str
    label: str = DISTRACTOR
    source_question_id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")
        if not self.body.strip():
            raise ValueError(f"document {self.id}: body must be non-empty")
        if self.label not in (GOLD, DISTRACTOR):
            raise ValueError(f"document {self.id}: label must be gold or distractor")


@dataclass(frozen=True)
class CorpusView:
    """The documents one question is allowed to retrieve from."""

    question_id: str
    documents: tuple[Document, ...]
    approx_token_count: int
    gold_overflow: bool = False
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "documents", tuple(self.documents))
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"corpus view {self.question_id}: duplicate document ids")
        if self.approx_token_count < 0:
            raise ValueError("approx_token_count must be non-negative")

    @cached_property
    def _by_id(self) -> dict[str, Document]:
        return {d.id: d for d in self.documents}

    def document(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def gold_documents(self) -> tuple[Document, ...]:
        return tuple(
            d for d in self.documents
            if d.label == GOLD and d.source_question_id == self.question_id
        )


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple[tuple[str, float], ...]
    k: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranked", tuple(self.ranked))
        if self.k < 1:
            raise ValueError("k must be positive")
        if len(self.ranked) > self.k:
            raise ValueError("ranked list longer than k")
        scores = [s for _, s in self.ranked]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.ranked]


# --- scorers ---------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _doc_text(doc: Document) -> str:
    return f"{doc.title} {doc.body}"


class Scorer(Protocol):
    def score(self, query: str, documents: Sequence[Document]) -> list[float]: ...


@dataclass(frozen=True)
class LexicalScorer:
    """BM25-style tf-idf with document-length normalization."""

    k1: float = 1.5
    b: float = 0.75

    def score(self, query: str, documents: Sequence[Document]) -> list[float]:
        query_terms = set(_tokenize(query))
        doc_tokens = [_tokenize(_doc_text(d)) for d in documents]
        doc_counts = [Counter(tokens) for tokens in doc_tokens]
        n = len(documents)
        avg_len = sum(len(t) for t in doc_tokens) / n if n else 0.0
        scores = []
        for tokens, counts in zip(doc_tokens, doc_counts):
            length_norm = self.k1 * (1 - self.b + self.b * len(tokens) / avg_len) if avg_len else 0.0
            total = 0.0
            for term in query_terms:
                tf = counts.get(term, 0)
                if tf == 0:
                    continue
                df = sum(1 for c in doc_counts if term in c)
                idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
                total += idf * tf * (self.k1 + 1) / (tf + length_norm)
            scores.append(total)
        return scores


class EmbeddingScorer:
    """Cosine similarity against embeddings from a remote (or injected) encoder."""

    def __init__(self, embed: EmbedFn):
        self._embed = embed

    def score(self, query: str, documents: Sequence[Document]) -> list[float]:
        vectors = self._embed([query] + [_doc_text(d) for d in documents])
        q = vectors[0]
        return [_cosine(q, v) for v in vectors[1:]]


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    norm = math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b))
    return dot / norm if norm else 0.0


class Reranker(Protocol):
    def rerank(
        self, query: str, scored: Sequence[tuple[Document, float]]
    ) -> Sequence[tuple[Document, float]]: ...


class PassthroughReranker:
    def rerank(self, query, scored):
        return scored


# --- operations ------------------------------------------------------------


def retrieve(
    query: str,
    corpus: CorpusView,
    k: int = DEFAULT_RETRIEVAL_K,
    scorer: Scorer | None = None,
    reranker: Reranker | None = None,
) -> RetrievalResult:
    """Top-k documents of the view by scorer score, optionally reranked.

    Ties break on corpus position so rankings are reproducible.
    """
    if not corpus.documents:
        raise EmptyCorpus(f"corpus view {corpus.question_id} has no documents")
    if k < 1:
        raise ValueError("k must be at least 1")
    scorer = scorer or LexicalScorer()
    scores = scorer.score(query, corpus.documents)
    order = sorted(range(len(corpus.documents)), key=lambda i: (-scores[i], i))[:k]
    top = [(corpus.documents[i], scores[i]) for i in order]
    if reranker is not None:
        rescored = list(reranker.rerank(query, top))
        rescored.sort(key=lambda pair: -pair[1])
        top = rescored
    return RetrievalResult(tuple((doc.id, score) for doc, score in top), k=k)


def generate_observation(query: str, retrieved: Sequence[Document], generator: Backend) -> str:
    """Ask the generator backend to answer the query from the retrieved documents."""
    if not retrieved:
        raise ValueError("retrieved documents must be non-empty")
    blocks = [f"[{d.id}] {d.title}\n{d.body}" for d in retrieved]
    content = "Documents:\n\n" + "\n\n".join(blocks) + f"\n\nQuery: {query}"
    conversation = [
        {"role": "system", "content": OBSERVATION_PROMPT},
        {"role": "user", "content": content},
    ]
    return complete(generator, conversation).strip()


TokenCounter = Callable[[str], int]


def default_token_counter(text: str) -> int:
    return (len(text) + 3) // 4


def document_tokens(doc: Document, counter: TokenCounter) -> int:
    return counter(doc.title) + counter(doc.body)


def corpus_tokens(documents: Iterable[Document], counter: TokenCounter) -> int:
    return sum(document_tokens(d, counter) for d in documents)


def build_corpus(
    example: "QAExample",
    pool: Sequence[Document],
    target: tuple[int, int],
    counter: TokenCounter | None = None,
    seed: int = 0,
) -> CorpusView:
    """Assemble a question's corpus: all gold documents plus seeded random pool
    draws until the approximate token count lands inside the target range.

    Draws that would overshoot the upper bound are skipped; gold documents
    are never dropped, even when they alone exceed the bound (the view is
    then flagged gold_overflow).
    """
    counter = counter or default_token_counter
    low, high = target
    if low <= 0 or high < low:
        raise ValueError("target range must satisfy 0 < low <= high")
    gold = list(example.gold_docs)
    if not gold:
        raise ValueError(f"example {example.id} has no gold documents")
    pool_ids = {d.id for d in pool}
    missing = [d.id for d in gold if d.id not in pool_ids]
    if missing:
        raise ValueError(f"pool is missing gold documents: {missing}")

    documents = list(gold)
    tokens = corpus_tokens(documents, counter)
    if tokens > high:
        log.warning(
            "question %s: gold documents alone hold ~%d tokens, above the %d cap",
            example.id, tokens, high,
        )
        return CorpusView(example.id, tuple(documents), tokens, gold_overflow=True, seed=seed)
    gold_ids = {d.id for d in gold}
    candidates = {d.id: d for d in pool if d.id not in gold_ids}
    order = sorted(candidates)
    random.Random(seed).shuffle(order)
    for doc_id in order:
        if tokens >= low:
            break
        cost = document_tokens(candidates[doc_id], counter)
        if tokens + cost > high:
            continue
        documents.append(candidates[doc_id])
        tokens += cost
    if tokens < low:
        raise PoolExhausted(
            f"question {example.id}: pool cannot reach the lower bound {low} (got {tokens})"
        )
    return CorpusView(example.id, tuple(documents), tokens, seed=seed)


@dataclass
class RagEngine:
    """Retrieval plus observation generation over per-question corpus views."""

    generator: Backend
    k: int = DEFAULT_RETRIEVAL_K
    scorer: Scorer = field(default_factory=LexicalScorer)
    reranker: Reranker | None = None
    views: dict[str, CorpusView] = field(default_factory=dict)

    def view_for(self, question_id: str) -> CorpusView:
        try:
            return self.views[question_id]
        except KeyError:
            raise RagchainError(f"no corpus view registered for question {question_id!r}") from None

    def observe(self, query: str, view: CorpusView) -> str:
        result = retrieve(query, view, k=self.k, scorer=self.scorer, reranker=self.reranker)
        documents = [view.document(doc_id) for doc_id in result.doc_ids()]
        return generate_observation(query, documents, self.generator)


# --- persistence -----------------------------------------------------------

DOCUMENTS_FILE = "documents.jsonl"
MANIFEST_FILE = "manifest.jsonl"


def document_to_dict(doc: Document) -> dict:
    return {
        "id": doc.id,
        "title": doc.title,
        "body": doc.body,
        "label": doc.label,
        "source_question_id": doc.source_question_id,
    }


def document_from_dict(payload: dict) -> Document:
    return Document(
        id=payload["id"],
        title=payload.get("title", ""),
        body=payload["body"],
        label=payload.get("label", DISTRACTOR),
        source_question_id=payload.get("source_question_id", ""),
    )


def save_corpus(directory: str | Path, views: Sequence[CorpusView]) -> None:
    """Write documents.jsonl (unique documents, sorted by id) and manifest.jsonl."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    store: dict[str, Document] = {}
    for view in views:
        for doc in view.documents:
            store.setdefault(doc.id, doc)
    with (directory / DOCUMENTS_FILE).open("w", encoding="utf-8") as handle:
        for doc_id in sorted(store):
            handle.write(json.dumps(document_to_dict(store[doc_id]), ensure_ascii=False) + "\n")
    with (directory / MANIFEST_FILE).open("w", encoding="utf-8") as handle:
        for view in views:
            manifest = {
                "question_id": view.question_id,
                "doc_ids": [d.id for d in view.documents],
                "approx_tokens": view.approx_token_count,
                "seed": view.seed,
            }
            if view.gold_overflow:
                manifest["gold_overflow"] = True
            handle.write(json.dumps(manifest, ensure_ascii=False) + "\n")


def load_corpus(directory: str | Path) -> dict[str, CorpusView]:
    """Load corpus views from a directory written by save_corpus."""
    directory = Path(directory)
    store: dict[str, Document] = {}
    for line in (directory / DOCUMENTS_FILE).read_text(encoding="utf-8").splitlines():
        if line.strip():
            doc = document_from_dict(json.loads(line))
            store[doc.id] = doc
    views: dict[str, CorpusView] = {}
    for line in (directory / MANIFEST_FILE).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        manifest = json.loads(line)
        missing = [doc_id for doc_id in manifest["doc_ids"] if doc_id not in store]
        if missing:
            raise RagchainError(
                f"manifest for {manifest['question_id']} references unknown documents: {missing}"
            )
        views[manifest["question_id"]] = CorpusView(
            question_id=manifest["question_id"],
            documents=tuple(store[doc_id] for doc_id in manifest["doc_ids"]),
            approx_token_count=manifest["approx_tokens"],
            gold_overflow=manifest.get("gold_overflow", False),
            seed=manifest.get("seed"),
        )
    return views
