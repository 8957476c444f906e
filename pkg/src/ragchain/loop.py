"""The iterative thought/action/observation loop shared by construction and inference."""
from __future__ import annotations

import logging
import time
from typing import Callable

from .backends import Backend, complete
from .chain import (
    ChainStatus,
    Finish,
    ParseError,
    ReasoningChain,
    ReasoningStep,
    parse_step,
    render_history,
)
from .errors import RagchainError

log = logging.getLogger(__name__)


class StepFailure(RagchainError):
    """A backend or retrieval error surfaced while executing one step."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"step {step_index} failed: {cause}")
        self.step_index = step_index
        self.cause = cause


def drive_chain(
    question: str,
    instruction: str,
    model: Backend,
    search: Callable[[str], str],
    t_max: int,
    question_id: str | None = None,
) -> tuple[ReasoningChain, list[float]]:
    """Iterate complete -> parse -> act until finish or the step cap.

    A parse failure aborts the chain, preserving the raw completion;
    backend and retrieval errors propagate wrapped with the step index.
    Returns the chain together with per-step wall-clock durations.
    """
    steps: list[ReasoningStep] = []
    timings: list[float] = []
    for index in range(1, t_max + 1):
        started = time.perf_counter()
        try:
            completion = complete(model, render_history(instruction, question, steps))
        except Exception as exc:
            raise StepFailure(index, exc) from exc
        try:
            thought, action = parse_step(completion)
        except ParseError as exc:
            timings.append(time.perf_counter() - started)
            log.info("question %s: aborting at step %d (%s)", question_id, index, exc.code)
            chain = ReasoningChain(
                question=question,
                steps=tuple(steps),
                status=ChainStatus.ABORTED,
                t_max=t_max,
                question_id=question_id,
                abort_reason=exc.code,
                raw_completion=completion,
            )
            return chain, timings
        if isinstance(action, Finish):
            steps.append(ReasoningStep(index, thought, action, None))
            timings.append(time.perf_counter() - started)
            chain = ReasoningChain(
                question=question,
                steps=tuple(steps),
                status=ChainStatus.FINISHED,
                t_max=t_max,
                question_id=question_id,
            )
            return chain, timings
        try:
            observation = search(action.query)
        except Exception as exc:
            raise StepFailure(index, exc) from exc
        steps.append(ReasoningStep(index, thought, action, observation))
        timings.append(time.perf_counter() - started)
    chain = ReasoningChain(
        question=question,
        steps=tuple(steps),
        status=ChainStatus.EXHAUSTED,
        t_max=t_max,
        question_id=question_id,
    )
    return chain, timings
