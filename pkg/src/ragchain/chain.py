"""Reasoning-chain domain model and the parser for raw model turns.

A chain answers one question through numbered steps. Each step carries a
free-text thought, a structured action (search or finish), and, for search
steps only, the observation returned by the retrieval engine. Values are
immutable after construction; extending a chain means building a new one.
"""
from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence, Union

from .errors import RagchainError

log = logging.getLogger(__name__)

DEFAULT_T_MAX = 10

COMPLETED_MARKER = "<|completed|>"


class ParseError(RagchainError):
    """A model completion could not be mapped onto the step structure."""

    code = "parse-error"


class NoActionFound(ParseError):
    code = "no-action-found"


class UnknownActionType(ParseError):
    code = "unknown-action-type"


class MissingParameter(ParseError):
    code = "missing-parameter"


class MissingObservation(ParseError):
    code = "missing-observation"


class MissingFinish(ParseError):
    code = "missing-finish"


@dataclass(frozen=True)
class Search:
    """Action that queries the retrieval engine."""

    query: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "query", self.query.strip())
        if not self.query:
            raise ValueError("search query must be non-empty")


@dataclass(frozen=True)
class Finish:
    """Action that ends the chain with a derived answer."""

    answer: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "answer", self.answer.strip())
        if not self.answer:
            raise ValueError("finish answer must be non-empty")


Action = Union[Search, Finish]

_ACTION_NAME_KEYS = ("function", "name", "type")


def action_to_dict(action: Action) -> dict:
    if isinstance(action, Search):
        return {"function": "search", "parameters": {"query": action.query}}
    return {"function": "finish", "parameters": {"answer": action.answer}}


def action_to_json(action: Action) -> str:
    return json.dumps(action_to_dict(action), ensure_ascii=False)


def _action_name(payload: dict) -> str | None:
    for key in _ACTION_NAME_KEYS:
        value = payload.get(key)
        if isinstance(value, str) and value.strip():
            return value
    return None


def action_from_dict(payload: dict) -> Action:
    """Map a decoded {"function": ..., "parameters": {...}} dictionary onto an Action."""
    name = _action_name(payload)
    if name is None:
        raise UnknownActionType("action dictionary has no function name")
    kind = name.strip().lower()
    if kind not in ("search", "finish"):
        # Tolerate decorated names like "search()" as long as they are unambiguous.
        is_search = "search" in kind
        is_finish = "finish" in kind
        if is_search == is_finish:
            raise UnknownActionType(f"unknown action type: {name!r}")
        kind = "search" if is_search else "finish"
    parameters = payload.get("parameters")
    if not isinstance(parameters, dict):
        parameters = {}
    if kind == "search":
        query = parameters.get("query", payload.get("query"))
        if query is None or not str(query).strip():
            raise MissingParameter("search action is missing a query")
        return Search(str(query))
    answer = parameters.get("answer", payload.get("answer"))
    if answer is None or not str(answer).strip():
        raise MissingParameter("finish action is missing an answer")
    return Finish(str(answer))


class ChainStatus(str, Enum):
    FINISHED = "finished"
    EXHAUSTED = "exhausted"
    ABORTED = "aborted"


@dataclass(frozen=True)
class ReasoningStep:
    """One (thought, action, observation) triple; observation only for search."""

    index: int
    thought: str
    action: Action
    observation: str | None = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("step index is 1-based")
        if isinstance(self.action, Finish) and self.observation is not None:
            raise ValueError("finish steps carry no observation")
        if isinstance(self.action, Search) and self.observation is None:
            raise ValueError("search steps require an observation")


@dataclass(frozen=True)
class ReasoningChain:
    """An ordered run of steps for one question, capped at t_max."""

    question: str
    steps: tuple[ReasoningStep, ...]
    status: ChainStatus
    t_max: int
    question_id: str | None = None
    abort_reason: str | None = None
    raw_completion: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "status", ChainStatus(self.status))
        if not self.question.strip():
            raise ValueError("chain question must be non-empty")
        if self.t_max < 1:
            raise ValueError("t_max must be positive")
        n = len(self.steps)
        if n > self.t_max:
            raise ValueError(f"chain has {n} steps but t_max is {self.t_max}")
        for position, step in enumerate(self.steps, start=1):
            if step.index != position:
                raise ValueError("step indices must match their positions")
            if isinstance(step.action, Finish) and position != n:
                raise ValueError("finish may only appear as the last step")
        finished = n >= 1 and isinstance(self.steps[-1].action, Finish)
        if self.status is ChainStatus.FINISHED:
            if not finished:
                raise ValueError("finished chains must end with a finish action")
        elif self.status is ChainStatus.EXHAUSTED:
            if finished:
                raise ValueError("exhausted chains must not contain a finish action")
            if n != self.t_max:
                raise ValueError("exhausted chains must have exactly t_max steps")
        else:
            if finished:
                raise ValueError("aborted chains must not contain a finish action")
            if n >= self.t_max:
                raise ValueError("aborted chains must stop before t_max")

    @property
    def finish_answer(self) -> str | None:
        if self.status is ChainStatus.FINISHED:
            action = self.steps[-1].action
            assert isinstance(action, Finish)
            return action.answer
        return None


# --- parsing ---------------------------------------------------------------

_THOUGHT_MARK = re.compile(r"\*{0,2}\s*thought\b[ \t*]*(\d+)?[ \t*]*:\s*\*{0,2}", re.IGNORECASE)
_ACTION_MARK = re.compile(r"\*{0,2}\s*action\b[ \t*]*(\d+)?[ \t*]*:\s*\*{0,2}", re.IGNORECASE)
_OBSERVATION_MARK = re.compile(r"\*{0,2}\s*observation\b[ \t*]*(\d+)?[ \t*]*:\s*\*{0,2}", re.IGNORECASE)


def _scan_object(text: str, start: int) -> int | None:
    """Return the index one past the balanced object starting at text[start] == '{'."""
    depth = 0
    quote: str | None = None
    i = start
    while i < len(text):
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return None


def _decode_object(candidate: str) -> dict | None:
    """Decode standard JSON or the single-quoted pseudo-JSON seen in model output."""
    for decoder in (json.loads, ast.literal_eval):
        try:
            value = decoder(candidate)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, dict):
            return value
    return None


def _iter_objects(text: str, start: int) -> Iterator[tuple[int, dict]]:
    i = text.find("{", start)
    while i != -1:
        end = _scan_object(text, i)
        if end is not None:
            payload = _decode_object(text[i:end])
            if payload is not None:
                yield i, payload
        i = text.find("{", i + 1)


def _strip_marker_debris(text: str) -> str:
    return text.strip().strip("*").strip()


def parse_step(raw_completion: str) -> tuple[str, Action]:
    """Extract the (thought, action) pair from one raw model turn.

    The thought is the text between the Thought and Action markers; the
    action is the first decodable action dictionary after the Action
    marker. Anything after the action dictionary is discarded.
    """
    action_mark = _ACTION_MARK.search(raw_completion)
    scan_from = action_mark.end() if action_mark else 0
    action: Action | None = None
    action_pos = len(raw_completion)
    extra = 0
    for pos, payload in _iter_objects(raw_completion, scan_from):
        if _action_name(payload) is None:
            continue
        if action is None:
            action = action_from_dict(payload)
            action_pos = pos
        else:
            extra += 1
    if action is None:
        raise NoActionFound("no decodable action dictionary in completion")
    if extra:
        log.debug("discarding %d extra action dictionaries in one completion", extra)

    thought_end = action_mark.start() if action_mark else action_pos
    thought_mark = _THOUGHT_MARK.search(raw_completion, 0, thought_end)
    thought_start = thought_mark.end() if thought_mark else 0
    thought = _strip_marker_debris(raw_completion[thought_start:thought_end])
    return thought, action


def parse_transcript(raw_completion: str) -> list[ReasoningStep]:
    """Parse a whole-chain completion: repeated thought/action/observation blocks.

    The transcript must terminate with a finish action; text after the
    finish block (including the completion marker) is ignored.
    """
    marks = list(_THOUGHT_MARK.finditer(raw_completion))
    if not marks:
        raise NoActionFound("transcript contains no thought/action blocks")
    steps: list[ReasoningStep] = []
    for i, mark in enumerate(marks):
        block_end = marks[i + 1].start() if i + 1 < len(marks) else len(raw_completion)
        block = raw_completion[mark.end():block_end]
        action_mark = _ACTION_MARK.search(block)
        if action_mark is None:
            raise NoActionFound(f"block {i + 1} has no action marker")
        thought = _strip_marker_debris(block[:action_mark.start()])
        decoded = next(_iter_objects(block, action_mark.end()), None)
        if decoded is None:
            raise NoActionFound(f"block {i + 1} has no decodable action dictionary")
        pos, payload = decoded
        action = action_from_dict(payload)
        index = len(steps) + 1
        if isinstance(action, Finish):
            steps.append(ReasoningStep(index, thought, action, None))
            return steps
        object_end = _scan_object(block, pos)
        assert object_end is not None
        rest = block[object_end:]
        observation_mark = _OBSERVATION_MARK.search(rest)
        if observation_mark is None:
            raise MissingObservation(f"search block {i + 1} has no observation")
        observation = rest[observation_mark.end():].split(COMPLETED_MARKER)[0].strip()
        if not observation:
            raise MissingObservation(f"search block {i + 1} has an empty observation")
        steps.append(ReasoningStep(index, thought, action, observation))
    raise MissingFinish("transcript has no finish action")


# --- rendering -------------------------------------------------------------

Message = dict[str, str]


def render_history(
    instruction: str,
    question: str,
    chain: ReasoningChain | Sequence[ReasoningStep] = (),
) -> list[Message]:
    """Render the conversation for the next model turn.

    System message carries the instruction prompt, the question follows as
    a user message, then each step becomes an assistant turn ("Thought t:
    ...\\nAction t: {...}") with search observations echoed back as user
    turns. Deterministic for fixed inputs.
    """
    steps = chain.steps if isinstance(chain, ReasoningChain) else chain
    messages: list[Message] = [
        {"role": "system", "content": instruction},
        {"role": "user", "content": question},
    ]
    for step in steps:
        messages.append({
            "role": "assistant",
            "content": f"Thought {step.index}: {step.thought}\n"
                       f"Action {step.index}: {action_to_json(step.action)}",
        })
        if step.observation is not None:
            messages.append({
                "role": "user",
                "content": f"Observation {step.index}: {step.observation}",
            })
    return messages


# --- serialization ---------------------------------------------------------


def chain_to_dict(chain: ReasoningChain) -> dict:
    steps = []
    for step in chain.steps:
        record = {"thought": step.thought, "action": action_to_dict(step.action)}
        if step.observation is not None:
            record["observation"] = step.observation
        steps.append(record)
    payload: dict = {
        "question": chain.question,
        "steps": steps,
        "status": chain.status.value,
        "t_max": chain.t_max,
    }
    if chain.question_id is not None:
        payload["question_id"] = chain.question_id
    if chain.abort_reason is not None:
        payload["abort_reason"] = chain.abort_reason
    if chain.raw_completion is not None:
        payload["raw_completion"] = chain.raw_completion
    return payload


def chain_from_dict(payload: dict) -> ReasoningChain:
    steps = tuple(
        ReasoningStep(
            index=i,
            thought=record.get("thought", ""),
            action=action_from_dict(record["action"]),
            observation=record.get("observation"),
        )
        for i, record in enumerate(payload["steps"], start=1)
    )
    return ReasoningChain(
        question=payload["question"],
        steps=steps,
        status=ChainStatus(payload["status"]),
        t_max=payload["t_max"],
        question_id=payload.get("question_id"),
        abort_reason=payload.get("abort_reason"),
        raw_completion=payload.get("raw_completion"),
    )
