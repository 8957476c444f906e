"""Deployment-time reasoning loop and final-answer derivation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

from .backends import Backend, complete
from .chain import ChainStatus, DEFAULT_T_MAX, ReasoningChain, chain_from_dict, chain_to_dict
from .loop import drive_chain
from .prompts import ANSWER_SYSTEM, PromptSet, render_template
from .rag import CorpusView, RagEngine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceRecord:
    """Outcome of one inference run: the chain plus derived answers and timings."""

    question_id: str
    chain: ReasoningChain
    reference_answer: str
    final_answer: str
    step_count: int
    wall_time: float
    step_timings: tuple[float, ...] = ()
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "step_timings", tuple(self.step_timings))
        if self.step_count != len(self.chain.steps):
            raise ValueError("step_count must equal the chain length")
        if self.chain.status is ChainStatus.FINISHED:
            if self.reference_answer != (self.chain.finish_answer or ""):
                raise ValueError("reference_answer must equal the finish action's answer")
        else:
            if self.reference_answer or self.final_answer:
                raise ValueError("unfinished records must carry empty answers")


def finalize_answer(
    question: str,
    reference_answer: str,
    ans_model: Backend,
    prompts: PromptSet,
) -> str:
    """Compress the finish action's answer into a concise final answer."""
    if not reference_answer.strip():
        raise ValueError("reference_answer must be non-empty")
    rendered = render_template(
        prompts.answer, question=question, reference_answer=reference_answer
    )
    conversation = [
        {"role": "system", "content": ANSWER_SYSTEM},
        {"role": "user", "content": rendered},
    ]
    completion = complete(ans_model, conversation).strip()
    return completion.splitlines()[0].strip() if completion else ""


def run_inference(
    question: str,
    corpus: CorpusView,
    model: Backend,
    ans_model: Backend,
    prompts: PromptSet,
    rag: RagEngine,
    t_max: int = DEFAULT_T_MAX,
) -> InferenceRecord:
    """Drive the reasoning loop for one question and derive its final answer.

    Exhausted and aborted chains yield records with empty answers; no
    fallback answer is synthesized.
    """
    started = time.perf_counter()
    chain, timings = drive_chain(
        question=question,
        instruction=prompts.inference,
        model=model,
        search=lambda query: rag.observe(query, corpus),
        t_max=t_max,
        question_id=corpus.question_id,
    )
    reference_answer = ""
    final_answer = ""
    if chain.status is ChainStatus.FINISHED:
        reference_answer = chain.finish_answer or ""
        final_answer = finalize_answer(question, reference_answer, ans_model, prompts)
    wall_time = time.perf_counter() - started
    return InferenceRecord(
        question_id=corpus.question_id,
        chain=chain,
        reference_answer=reference_answer,
        final_answer=final_answer,
        step_count=len(chain.steps),
        wall_time=wall_time,
        step_timings=tuple(timings),
        error=chain.abort_reason,
    )


def record_to_dict(record: InferenceRecord) -> dict:
    payload = {
        "question_id": record.question_id,
        "status": record.chain.status.value,
        "reference_answer": record.reference_answer,
        "final_answer": record.final_answer,
        "step_count": record.step_count,
        "wall_time_s": record.wall_time,
        "step_timings_s": list(record.step_timings),
        "chain": chain_to_dict(record.chain),
    }
    if record.error is not None:
        payload["error"] = record.error
    return payload


def record_from_dict(payload: dict) -> InferenceRecord:
    return InferenceRecord(
        question_id=payload["question_id"],
        chain=chain_from_dict(payload["chain"]),
        reference_answer=payload["reference_answer"],
        final_answer=payload["final_answer"],
        step_count=payload["step_count"],
        wall_time=payload["wall_time_s"],
        step_timings=tuple(payload.get("step_timings_s", ())),
        error=payload.get("error"),
    )
