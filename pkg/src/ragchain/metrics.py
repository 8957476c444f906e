"""Answer normalization and the token-overlap metrics used for filtering and scoring.

Normalization follows the common QA convention: lowercase, strip
punctuation, drop the articles a/an/the, collapse whitespace.
"""
from __future__ import annotations

import re
import string
from collections import Counter
from collections.abc import Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCTUATION = set(string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCTUATION)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def f1_score(prediction: str, ground_truth: str) -> float:
    """Token-level F1 over normalized whitespace tokens, in [0, 1]."""
    pred_tokens = normalize_answer(prediction).split()
    gt_tokens = normalize_answer(ground_truth).split()
    if not pred_tokens and not gt_tokens:
        return 1.0
    if not pred_tokens or not gt_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(gt_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gt_tokens)
    return 2 * precision * recall / (precision + recall)


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold answer."""
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")
    normalized = normalize_answer(prediction)
    return int(any(normalize_answer(gold) == normalized for gold in gold_answers))
