"""Independent brute-force reference implementations used as test oracles.

These deliberately avoid sharing code with the package: normalization is
a character loop, multiset overlap is a sorted two-pointer walk, and the
retrieval scorer recomputes everything per document from scratch.
"""
from __future__ import annotations

import math
import string

_ARTICLES = ("a", "an", "the")
_ASCII_ALNUM = set("abcdefghijklmnopqrstuvwxyz0123456789")


def oracle_answer_tokens(text: str) -> list[str]:
    kept = []
    for ch in text.lower():
        if ch in string.punctuation:
            continue
        kept.append(ch)
    words = "".join(kept).split()
    return [w for w in words if w not in _ARTICLES]


def oracle_f1(prediction: str, ground_truth: str) -> float:
    pred = oracle_answer_tokens(prediction)
    gold = oracle_answer_tokens(ground_truth)
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    a, b = sorted(pred), sorted(gold)
    i = j = overlap = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            overlap += 1
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def oracle_exact_match(prediction: str, gold_answers: list[str]) -> int:
    pred = " ".join(oracle_answer_tokens(prediction))
    return int(any(" ".join(oracle_answer_tokens(g)) == pred for g in gold_answers))


def _oracle_retrieval_tokens(text: str) -> list[str]:
    out = []
    word = []
    for ch in text.lower():
        if ch in _ASCII_ALNUM:
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


def oracle_lexical_scores(
    query: str,
    doc_texts: list[str],
    k1: float = 1.5,
    b: float = 0.75,
) -> list[float]:
    """Recompute BM25-style scores with plain per-document loops."""
    query_terms = sorted(set(_oracle_retrieval_tokens(query)))
    tokenized = [_oracle_retrieval_tokens(t) for t in doc_texts]
    n = len(doc_texts)
    avg_len = sum(len(t) for t in tokenized) / n if n else 0.0
    scores = []
    for tokens in tokenized:
        score = 0.0
        for term in query_terms:
            tf = sum(1 for t in tokens if t == term)
            if tf == 0:
                continue
            df = sum(1 for other in tokenized if term in other)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            norm = k1 * (1 - b + b * len(tokens) / avg_len) if avg_len else 0.0
            score += idf * tf * (k1 + 1) / (tf + norm)
        scores.append(score)
    return scores
