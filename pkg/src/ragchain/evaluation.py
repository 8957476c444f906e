"""Evaluation harness: benchmark loaders, EM / judge metrics, chain-length analysis."""
from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from pathlib import Path
from statistics import mean, median
from typing import Iterable, Sequence

from .backends import Backend, complete
from .errors import RagchainError
from .inference import InferenceRecord
from .metrics import exact_match, f1_score
from .pipeline import DecompositionStep, QAExample
from .prompts import JUDGE_PROMPT, JUDGE_SYSTEM, render_template
from .rag import DISTRACTOR, GOLD, Document

log = logging.getLogger(__name__)

BENCHMARK_FORMATS = ("musique", "hotpotqa", "iirc", "nq")


class UnparseableVerdict(RagchainError):
    pass


class SchemaMismatch(RagchainError):
    """A benchmark file does not match its published schema."""

    def __init__(self, path: str, detail: str = ""):
        message = f"schema mismatch at {path}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.field_path = path


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    prediction: str
    ground_truth: str
    aliases: tuple[str, ...]
    em: int
    f1: float
    acc_l: int | None = None
    acc_l_rationale: str | None = None
    step_count: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "aliases", tuple(self.aliases))
        if self.em not in (0, 1):
            raise ValueError("em must be 0 or 1")
        if self.em == 1 and self.f1 != 1.0:
            raise ValueError("em = 1 implies f1 = 1")
        if self.acc_l is not None and self.acc_l not in (0, 1):
            raise ValueError("acc_l must be 0 or 1 when present")

    def to_dict(self) -> dict:
        payload: dict = {
            "question_id": self.question_id,
            "prediction": self.prediction,
            "ground_truth": self.ground_truth,
            "aliases": list(self.aliases),
            "em": self.em,
            "f1": self.f1,
        }
        if self.acc_l is not None:
            payload["acc_l"] = self.acc_l
        if self.acc_l_rationale is not None:
            payload["acc_l_rationale"] = self.acc_l_rationale
        if self.step_count is not None:
            payload["step_count"] = self.step_count
        return payload


_VERDICT = re.compile(r"[a-z]+", re.IGNORECASE)


def judge_accl(
    question: str,
    prediction: str,
    ground_truth: str,
    judge: Backend,
) -> tuple[int, str]:
    """Ask the judge backend for a semantic-correctness verdict.

    The shipped judge prompt demands a leading YES/NO token; a reply
    without one raises UnparseableVerdict rather than being coerced.
    """
    rendered = render_template(
        JUDGE_PROMPT, question=question, gold=ground_truth, prediction=prediction
    )
    conversation = [
        {"role": "system", "content": JUDGE_SYSTEM},
        {"role": "user", "content": rendered},
    ]
    reply = complete(judge, conversation).strip()
    token_match = _VERDICT.search(reply)
    token = token_match.group(0).upper() if token_match else ""
    if token not in ("YES", "NO"):
        raise UnparseableVerdict(f"judge reply has no YES/NO verdict: {reply[:200]!r}")
    rationale = reply[token_match.end():].lstrip(" \t:,.;-—–*").strip()
    return (1 if token == "YES" else 0), rationale


def evaluate_records(
    records: Iterable[InferenceRecord],
    examples: Sequence[QAExample],
    judge: Backend | None = None,
) -> list[EvalRecord]:
    """Score inference records against their examples; judge pass is optional."""
    by_id = {example.id: example for example in examples}
    results = []
    for record in records:
        example = by_id.get(record.question_id)
        if example is None:
            raise RagchainError(f"no example with id {record.question_id!r} for evaluation")
        gold_answers = example.gold_answers()
        em = exact_match(record.final_answer, gold_answers)
        f1 = max(f1_score(record.final_answer, gold) for gold in gold_answers)
        acc_l = None
        rationale = None
        if judge is not None:
            try:
                acc_l, rationale = judge_accl(
                    example.question, record.final_answer, example.answer, judge
                )
            except UnparseableVerdict as exc:
                log.warning("question %s: %s", record.question_id, exc)
                rationale = str(exc)
        results.append(
            EvalRecord(
                question_id=record.question_id,
                prediction=record.final_answer,
                ground_truth=example.answer,
                aliases=example.aliases,
                em=em,
                f1=f1,
                acc_l=acc_l,
                acc_l_rationale=rationale,
                step_count=record.step_count,
            )
        )
    return results


def build_report(
    benchmark: str,
    records: Sequence[EvalRecord],
    judge_prompt: str | None = None,
) -> dict:
    """Aggregate means as percentages with two decimals, plus per-record detail.

    When a judge pass ran, the full judge prompt template is recorded so the
    judging protocol stays auditable.
    """
    n = len(records)
    em_pct = round(100.0 * mean(r.em for r in records), 2) if n else None
    judged = [r.acc_l for r in records if r.acc_l is not None]
    accl_pct = round(100.0 * mean(judged), 2) if judged else None
    report = {
        "benchmark": benchmark,
        "n": n,
        "em_pct": em_pct,
        "accl_pct": accl_pct,
        "per_record": [r.to_dict() for r in records],
    }
    if judge_prompt is not None:
        report["judge_prompt"] = judge_prompt
    return report


@dataclass(frozen=True)
class ChainLengthStats:
    histogram: dict[int, int]
    mean: float | None
    median: float | None
    n: int

    def to_dict(self) -> dict:
        return {
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "mean": self.mean,
            "median": self.median,
            "n": self.n,
        }

    def to_csv(self) -> str:
        lines = ["steps,count"]
        lines += [f"{steps},{count}" for steps, count in sorted(self.histogram.items())]
        return "\n".join(lines) + "\n"


def chain_length_stats(records: Iterable[EvalRecord]) -> ChainLengthStats:
    """Distribution of step counts over records with a full judge score.

    Records without acc_l = 1 or without a step count are excluded; an
    empty selection yields an empty histogram rather than an error.
    """
    counts = [
        r.step_count
        for r in records
        if r.acc_l == 1 and r.step_count is not None
    ]
    histogram: dict[int, int] = {}
    for count in counts:
        histogram[count] = histogram.get(count, 0) + 1
    return ChainLengthStats(
        histogram=histogram,
        mean=mean(counts) if counts else None,
        median=median(counts) if counts else None,
        n=len(counts),
    )


def sample_examples(examples: Sequence[QAExample], n: int, seed: int) -> list[QAExample]:
    """Seeded random sample (without replacement) of at most n examples."""
    if n >= len(examples):
        return list(examples)
    return random.Random(seed).sample(list(examples), n)


# --- benchmark loaders -------------------------------------------------------


def _require(payload: dict, key: str, path: str):
    if key not in payload:
        raise SchemaMismatch(f"{path}.{key}", "missing field")
    return payload[key]


def _non_empty_text(value, path: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise SchemaMismatch(path, "expected non-empty text")
    return value


def load_benchmark(path: str | Path, fmt: str) -> list[QAExample]:
    """Load a benchmark file in one of the supported published schemas."""
    if fmt not in BENCHMARK_FORMATS:
        raise ValueError(f"unknown benchmark format {fmt!r}; expected one of {BENCHMARK_FORMATS}")
    loader = {
        "musique": _load_musique,
        "hotpotqa": _load_hotpotqa,
        "iirc": _load_iirc,
        "nq": _load_nq,
    }[fmt]
    return loader(Path(path))


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path.name}:{lineno}", f"invalid JSON: {exc}") from exc
    return records


def _load_musique(path: Path) -> list[QAExample]:
    examples = []
    for i, record in enumerate(_read_jsonl(path)):
        where = f"records[{i}]"
        qid = str(_require(record, "id", where))
        question = _non_empty_text(_require(record, "question", where), f"{where}.question")
        answer = _non_empty_text(_require(record, "answer", where), f"{where}.answer")
        paragraphs = _require(record, "paragraphs", where)
        if not isinstance(paragraphs, list):
            raise SchemaMismatch(f"{where}.paragraphs", "expected a list")
        docs = []
        texts: dict[int, str] = {}
        for j, paragraph in enumerate(paragraphs):
            p_where = f"{where}.paragraphs[{j}]"
            idx = paragraph.get("idx", j)
            text = _non_empty_text(
                _require(paragraph, "paragraph_text", p_where), f"{p_where}.paragraph_text"
            )
            texts[idx] = text
            docs.append(
                Document(
                    id=f"{qid}::p{idx}",
                    title=paragraph.get("title", ""),
                    body=text,
                    label=GOLD if paragraph.get("is_supporting") else DISTRACTOR,
                    source_question_id=qid,
                )
            )
        decomposition = None
        if record.get("question_decomposition"):
            decomposition = tuple(
                DecompositionStep(
                    question=_non_empty_text(
                        _require(step, "question", f"{where}.question_decomposition[{k}]"),
                        f"{where}.question_decomposition[{k}].question",
                    ),
                    answer=str(step.get("answer", "")),
                    context=texts.get(step.get("paragraph_support_idx"), ""),
                )
                for k, step in enumerate(record["question_decomposition"])
            )
        examples.append(
            QAExample(
                id=qid,
                question=question,
                answer=answer,
                gold_docs=tuple(d for d in docs if d.label == GOLD),
                decomposition=decomposition,
                source_benchmark="musique",
                aliases=tuple(record.get("answer_aliases", ())),
            )
        )
    return examples


def _load_hotpotqa(path: Path) -> list[QAExample]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(path.name, f"invalid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise SchemaMismatch(path.name, "expected a top-level list")
    examples = []
    for i, record in enumerate(payload):
        where = f"records[{i}]"
        qid = str(_require(record, "_id", where))
        question = _non_empty_text(_require(record, "question", where), f"{where}.question")
        answer = _non_empty_text(_require(record, "answer", where), f"{where}.answer")
        supporting = _require(record, "supporting_facts", where)
        gold_titles = {fact[0] for fact in supporting if isinstance(fact, (list, tuple)) and fact}
        context = _require(record, "context", where)
        docs = []
        for j, entry in enumerate(context):
            c_where = f"{where}.context[{j}]"
            if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                raise SchemaMismatch(c_where, "expected [title, sentences]")
            title, sentences = entry
            body = "".join(sentences).strip()
            if not body:
                raise SchemaMismatch(f"{c_where}.sentences", "empty paragraph")
            docs.append(
                Document(
                    id=f"{qid}::{j}",
                    title=title,
                    body=body,
                    label=GOLD if title in gold_titles else DISTRACTOR,
                    source_question_id=qid,
                )
            )
        examples.append(
            QAExample(
                id=qid,
                question=question,
                answer=answer,
                gold_docs=tuple(d for d in docs if d.label == GOLD),
                source_benchmark="hotpotqa",
            )
        )
    return examples


def _iirc_answer(answer: dict, path: str) -> str:
    answer_type = _require(answer, "type", path)
    if answer_type == "span":
        spans = _require(answer, "answer_spans", path)
        texts = [span.get("text", "").strip() for span in spans]
        texts = [t for t in texts if t]
        if not texts:
            raise SchemaMismatch(f"{path}.answer_spans", "no span text")
        return ", ".join(texts)
    if answer_type in ("binary", "value"):
        value = str(_require(answer, "answer_value", path)).strip()
        if not value:
            raise SchemaMismatch(f"{path}.answer_value", "empty value")
        return value
    if answer_type == "none":
        return "none"
    raise SchemaMismatch(f"{path}.type", f"unknown answer type {answer_type!r}")


def _load_iirc(path: Path) -> list[QAExample]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(path.name, f"invalid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise SchemaMismatch(path.name, "expected a top-level list")
    examples = []
    for i, passage in enumerate(payload):
        p_where = f"passages[{i}]"
        questions = _require(passage, "questions", p_where)
        for j, entry in enumerate(questions):
            q_where = f"{p_where}.questions[{j}]"
            qid = str(entry.get("qid", f"iirc-{i}-{j}"))
            question = _non_empty_text(
                _require(entry, "question", q_where), f"{q_where}.question"
            )
            answer = _iirc_answer(_require(entry, "answer", q_where), f"{q_where}.answer")
            context = entry.get("context", [])
            docs = []
            for k, snippet in enumerate(context):
                text = snippet.get("text", "").strip()
                if not text:
                    continue
                title = snippet.get("passage", "")
                if title == "main":
                    title = passage.get("title", "")
                docs.append(
                    Document(
                        id=f"{qid}::ctx{k}",
                        title=title,
                        body=text,
                        label=GOLD,
                        source_question_id=qid,
                    )
                )
            if not docs:
                main_text = passage.get("text", "").strip()
                if main_text:
                    docs.append(
                        Document(
                            id=f"{qid}::main",
                            title=passage.get("title", ""),
                            body=main_text,
                            label=GOLD,
                            source_question_id=qid,
                        )
                    )
            examples.append(
                QAExample(
                    id=qid,
                    question=question,
                    answer=answer,
                    gold_docs=tuple(docs),
                    source_benchmark="iirc",
                )
            )
    return examples


_NQ_GOLD_KEYS = ("isgold", "is_gold", "hasanswer", "has_answer")


def _load_nq(path: Path) -> list[QAExample]:
    examples = []
    for i, record in enumerate(_read_jsonl(path)):
        where = f"records[{i}]"
        qid = str(record.get("id", f"nq-{i}"))
        question = _non_empty_text(_require(record, "question", where), f"{where}.question")
        answers = _require(record, "answers", where)
        if not isinstance(answers, list) or not answers:
            raise SchemaMismatch(f"{where}.answers", "expected a non-empty list")
        answer = _non_empty_text(answers[0], f"{where}.answers[0]")
        ctxs = _require(record, "ctxs", where)
        docs = []
        for j, ctx in enumerate(ctxs):
            c_where = f"{where}.ctxs[{j}]"
            body = _non_empty_text(_require(ctx, "text", c_where), f"{c_where}.text")
            is_gold = any(ctx.get(key) for key in _NQ_GOLD_KEYS)
            docs.append(
                Document(
                    id=f"{qid}::{ctx.get('id', j)}",
                    title=ctx.get("title", ""),
                    body=body,
                    label=GOLD if is_gold else DISTRACTOR,
                    source_question_id=qid,
                )
            )
        examples.append(
            QAExample(
                id=qid,
                question=question,
                answer=answer,
                gold_docs=tuple(d for d in docs if d.label == GOLD),
                source_benchmark="nq",
                aliases=tuple(answers[1:]),
            )
        )
    return examples


def benchmark_document_pool(path: str | Path, fmt: str) -> list[Document]:
    """All gold and distractor documents of a benchmark file, for corpus building."""
    pool: dict[str, Document] = {}
    for doc in _benchmark_documents(Path(path), fmt):
        pool.setdefault(doc.id, doc)
    return list(pool.values())


def _benchmark_documents(path: Path, fmt: str) -> Iterable[Document]:
    if fmt == "musique":
        for i, record in enumerate(_read_jsonl(path)):
            qid = str(record.get("id", i))
            for j, paragraph in enumerate(record.get("paragraphs", [])):
                text = paragraph.get("paragraph_text", "")
                if not text.strip():
                    continue
                yield Document(
                    id=f"{qid}::p{paragraph.get('idx', j)}",
                    title=paragraph.get("title", ""),
                    body=text,
                    label=GOLD if paragraph.get("is_supporting") else DISTRACTOR,
                    source_question_id=qid,
                )
    elif fmt == "hotpotqa":
        payload = json.loads(path.read_text(encoding="utf-8"))
        for record in payload:
            qid = str(record.get("_id", ""))
            supporting = {f[0] for f in record.get("supporting_facts", []) if f}
            for j, (title, sentences) in enumerate(record.get("context", [])):
                body = "".join(sentences).strip()
                if not body:
                    continue
                yield Document(
                    id=f"{qid}::{j}",
                    title=title,
                    body=body,
                    label=GOLD if title in supporting else DISTRACTOR,
                    source_question_id=qid,
                )
    elif fmt == "iirc":
        for example in _load_iirc(path):
            yield from example.gold_docs
    elif fmt == "nq":
        for i, record in enumerate(_read_jsonl(path)):
            qid = str(record.get("id", f"nq-{i}"))
            for j, ctx in enumerate(record.get("ctxs", [])):
                body = ctx.get("text", "")
                if not body.strip():
                    continue
                is_gold = any(ctx.get(key) for key in _NQ_GOLD_KEYS)
                yield Document(
                    id=f"{qid}::{ctx.get('id', j)}",
                    title=ctx.get("title", ""),
                    body=body,
                    label=GOLD if is_gold else DISTRACTOR,
                    source_question_id=qid,
                )
    else:
        raise ValueError(f"unknown benchmark format {fmt!r}")
