"""Chain construction over seed questions, F1 filtering, and SFT dataset emission."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .backends import Backend, complete
from .chain import (
    COMPLETED_MARKER,
    ChainStatus,
    DEFAULT_T_MAX,
    ParseError,
    ReasoningChain,
    chain_from_dict,
    chain_to_dict,
    parse_transcript,
    render_history,
)
from .errors import RagchainError
from .loop import drive_chain
from .metrics import f1_score
from .prompts import PromptSet, render_template
from .rag import Document, RagEngine, document_from_dict, document_to_dict

log = logging.getLogger(__name__)

REASON_NO_FINISH = "no-finish"
REASON_ZERO_F1 = "zero-f1"


class MissingDecomposition(RagchainError):
    pass


class RejectsUnfinished(RagchainError):
    pass


@dataclass(frozen=True)
class DecompositionStep:
    question: str
    answer: str
    context: str = ""


@dataclass(frozen=True)
class QAExample:
    """One seed-dataset record: a question, its answer, and its gold documents."""

    id: str
    question: str
    answer: str
    gold_docs: tuple[Document, ...] = ()
    decomposition: tuple[DecompositionStep, ...] | None = None
    source_benchmark: str = ""
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_docs", tuple(self.gold_docs))
        object.__setattr__(self, "aliases", tuple(self.aliases))
        if self.decomposition is not None:
            object.__setattr__(self, "decomposition", tuple(self.decomposition))
        if not self.question.strip():
            raise ValueError(f"example {self.id}: question must be non-empty")
        if not self.answer.strip():
            raise ValueError(f"example {self.id}: answer must be non-empty")

    def gold_answers(self) -> tuple[str, ...]:
        return (self.answer, *self.aliases)


@dataclass(frozen=True)
class SftSegment:
    role: str
    content: str
    trainable: bool

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown segment role {self.role!r}")
        if self.trainable != (self.role == "assistant"):
            raise ValueError("trainable must hold exactly for assistant segments")


@dataclass(frozen=True)
class SftSample:
    """A rendered conversation with per-segment loss-mask flags."""

    segments: tuple[SftSegment, ...]
    source_chain_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))


def construct_chain(
    example: QAExample,
    lrm: Backend,
    prompts: PromptSet,
    rag: RagEngine,
    t_max: int = DEFAULT_T_MAX,
) -> ReasoningChain:
    """Build one reasoning chain for a seed example with the chain-constructor model.

    Retrieval is restricted to the example's registered corpus view, which
    must contain all of its gold documents.
    """
    view = rag.view_for(example.id)
    view_ids = {d.id for d in view.documents}
    missing = [d.id for d in example.gold_docs if d.id not in view_ids]
    if missing:
        raise RagchainError(f"corpus view for {example.id} is missing gold documents: {missing}")
    chain, _ = drive_chain(
        question=example.question,
        instruction=prompts.data_construction,
        model=lrm,
        search=lambda query: rag.observe(query, view),
        t_max=t_max,
        question_id=example.id,
    )
    return chain


@dataclass
class FilterReport:
    kept: int = 0
    dropped: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def record_drop(self, reason: str) -> None:
        self.dropped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {"kept": self.kept, "dropped": self.dropped, "reasons": dict(self.reasons)}


def filter_chains(
    pairs: Iterable[tuple[ReasoningChain, QAExample]],
) -> tuple[list[tuple[ReasoningChain, QAExample]], FilterReport]:
    """Keep finished chains whose finish answer scores F1 > 0 against the truth."""
    kept: list[tuple[ReasoningChain, QAExample]] = []
    report = FilterReport()
    for chain, example in pairs:
        if chain.status is not ChainStatus.FINISHED:
            report.record_drop(REASON_NO_FINISH)
            continue
        answer = chain.finish_answer
        assert answer is not None
        if f1_score(answer, example.answer) == 0.0:
            report.record_drop(REASON_ZERO_F1)
            continue
        kept.append((chain, example))
        report.kept += 1
    return kept, report


def _render_decomposition(decomposition: Sequence[DecompositionStep]) -> str:
    payload = [
        {"question": step.question, "answer": step.answer, "context": step.context}
        for step in decomposition
    ]
    return json.dumps(payload, ensure_ascii=False, indent=2)


def construct_chain_ablation(
    example: QAExample,
    llm: Backend,
    prompts: PromptSet,
) -> ReasoningChain:
    """Build a chain from a single completion guided by the gold decomposition.

    The model writes the whole transcript (observations included) in one
    turn, terminated by a finish action and the completion marker.
    """
    if not example.decomposition:
        raise MissingDecomposition(f"example {example.id} has no gold decomposition")
    rendered = render_template(
        prompts.ablation,
        question=example.question,
        answer=example.answer,
        decomposition=_render_decomposition(example.decomposition),
    )
    conversation = [{"role": "system", "content": rendered}]
    completion = complete(llm, conversation)
    if COMPLETED_MARKER not in completion:
        log.debug("example %s: transcript lacks the %s marker", example.id, COMPLETED_MARKER)
    try:
        steps = parse_transcript(completion)
    except ParseError as exc:
        n_parsed = 0
        return ReasoningChain(
            question=example.question,
            steps=(),
            status=ChainStatus.ABORTED,
            t_max=max(DEFAULT_T_MAX, n_parsed + 1),
            question_id=example.id,
            abort_reason=exc.code,
            raw_completion=completion,
        )
    return ReasoningChain(
        question=example.question,
        steps=tuple(steps),
        status=ChainStatus.FINISHED,
        t_max=max(DEFAULT_T_MAX, len(steps)),
        question_id=example.id,
    )


def emit_sft(chains: Sequence[ReasoningChain], inference_prompt: str) -> list[SftSample]:
    """Render finished chains into loss-masked conversation samples.

    Rendering uses the deployment-time instruction prompt; only assistant
    segments (thought plus action text) are trainable.
    """
    samples = []
    for i, chain in enumerate(chains):
        if chain.status is not ChainStatus.FINISHED:
            raise RejectsUnfinished(
                f"chain {chain.question_id or i} has status {chain.status.value}"
            )
        messages = render_history(inference_prompt, chain.question, chain.steps)
        segments = tuple(
            SftSegment(
                role=m["role"],
                content=m["content"],
                trainable=m["role"] == "assistant",
            )
            for m in messages
        )
        samples.append(
            SftSample(segments=segments, source_chain_id=chain.question_id or f"chain-{i:06d}")
        )
    return samples


# --- persistence -----------------------------------------------------------


def example_to_dict(example: QAExample) -> dict:
    payload: dict = {
        "id": example.id,
        "question": example.question,
        "answer": example.answer,
        "gold_docs": [document_to_dict(d) for d in example.gold_docs],
        "source_benchmark": example.source_benchmark,
    }
    if example.aliases:
        payload["aliases"] = list(example.aliases)
    if example.decomposition is not None:
        payload["decomposition"] = [
            {"question": s.question, "answer": s.answer, "context": s.context}
            for s in example.decomposition
        ]
    return payload


def example_from_dict(payload: dict) -> QAExample:
    decomposition = None
    if "decomposition" in payload:
        decomposition = tuple(
            DecompositionStep(
                question=s["question"], answer=s["answer"], context=s.get("context", "")
            )
            for s in payload["decomposition"]
        )
    return QAExample(
        id=str(payload["id"]),
        question=payload["question"],
        answer=payload["answer"],
        gold_docs=tuple(document_from_dict(d) for d in payload.get("gold_docs", [])),
        decomposition=decomposition,
        source_benchmark=payload.get("source_benchmark", ""),
        aliases=tuple(payload.get("aliases", ())),
    )


def sft_sample_to_dict(sample: SftSample) -> dict:
    return {
        "segments": [
            {"role": s.role, "content": s.content, "trainable": s.trainable}
            for s in sample.segments
        ],
        "source_chain_id": sample.source_chain_id,
    }


def sft_sample_from_dict(payload: dict) -> SftSample:
    return SftSample(
        segments=tuple(
            SftSegment(role=s["role"], content=s["content"], trainable=s["trainable"])
            for s in payload["segments"]
        ),
        source_chain_id=payload["source_chain_id"],
    )


__all__ = [
    "DecompositionStep",
    "FilterReport",
    "MissingDecomposition",
    "QAExample",
    "RejectsUnfinished",
    "SftSample",
    "SftSegment",
    "chain_from_dict",
    "chain_to_dict",
    "construct_chain",
    "construct_chain_ablation",
    "emit_sft",
    "example_from_dict",
    "example_to_dict",
    "f1_score",
    "filter_chains",
    "sft_sample_from_dict",
    "sft_sample_to_dict",
]
