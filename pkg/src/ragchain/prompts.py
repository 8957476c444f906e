"""Shipped prompt templates and their rendering helper.

Templates are plain text with {name} placeholders. Rendering substitutes
by literal token replacement (templates embed JSON braces, so str.format
is off the table) and refuses to leave a known placeholder behind.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import RagchainError

_SEARCH_SCHEMA = """{
    "name": "search",
    "description": "Look up information in the knowledge base. Use this whenever you need an external fact.",
    "parameters": {
        "type": "object",
        "properties": {
            "query": {
                "description": "what you want to search"
            }
        },
        "required": ["query"]
    }
}"""

_FINISH_SCHEMA = """{
    "name": "finish",
    "description": "Conclude the reasoning process and give the final answer. The reasoning process ends once this function is called.",
    "parameters": {
        "type": "object",
        "properties": {
            "answer": {
                "description": "the final answer"
            }
        },
        "required": ["answer"]
    }
}"""

_FUNCTIONS_BLOCK = f"""Available functions:

(1) search
{_SEARCH_SCHEMA}

(2) finish
{_FINISH_SCHEMA}"""

DATA_CONSTRUCTION_PROMPT = f"""Your task is to solve a question answering problem by reasoning in explicit steps. A reasoning step is one Thought, one Action, and one Observation, in that order. In a Thought you reason about the current state of the problem; an Action is a function call in JSON form, using one of the two functions below.

{_FUNCTIONS_BLOCK}

Rules you must follow:
(1) Call functions exactly in the JSON format shown above.
(2) Number every Thought, Action, and Observation with the step it belongs to ("Thought 1:", "Action 1:", "Observation 1:", then "Thought 2:" and so on).
(3) Write the Thought first, then the Action. The Observation for each search is returned to you; do not write it yourself.
(4) Reconsider your approach inside a Thought whenever the observations look wrong or insufficient, for example:
"There is not enough information in the previous steps. I need to plan my query again."
"No context found in the observation. Let me restart the reasoning."
"Missing information. Let me restructure my query."
"Wait, maybe I made a mistake. I need to rethink this from scratch."
"I should take a step back and reconsider my approach."
"Let me try a different line of search."
(5) Give every Action as a function call in the form shown above.
(6) Rely only on the observations, never on your own background knowledge.

Example of the expected format:

Question: In which country was the director of the film Example born?
Thought 1: I first need to find out who directed the film Example.
Action 1: {{"function": "search", "parameters": {{"query": "Who directed the film Example?"}}}}
Observation 1: The film Example was directed by Jane Roe.
Thought 2: Now I need Jane Roe's country of birth.
Action 2: {{"function": "search", "parameters": {{"query": "Where was Jane Roe born?"}}}}
Observation 2: Jane Roe was born in Utopia.
Thought 3: That answers the question.
Action 3: {{"function": "finish", "parameters": {{"answer": "Utopia"}}}}"""

INFERENCE_PROMPT = f"""Your task is to solve a question answering problem. Reason in steps that interleave Thought, Action, and Observation. A Thought reasons about the current state of the problem; an Action is a function call in JSON form, using one of the two functions below.

{_FUNCTIONS_BLOCK}

Write each turn as:
Thought <t>: <your reasoning>
Action <t>: {{"function": "<search or finish>", "parameters": {{...}}}}

The Observation for each search is returned to you. Follow the format strictly."""

ANSWER_PROMPT = """The reference answer below is the settled final answer to the question. Your task is to reduce it to its most concise form. Output only the short answer and no other words.

[Question]
{question}

[Reference answer]
{reference_answer}

Output only the short answer and nothing else. For a yes or no answer, output just that word. Give the shortest possible answer."""

ABLATION_PROMPT = f"""You are given a question, its ground-truth answer, and a decomposition into sub-questions with their answers and contexts. Write out a complete reasoning process that solves the question, interleaving numbered Thought, Action, and Observation steps. Actions are function calls in JSON form, using one of the two functions below.

{_FUNCTIONS_BLOCK}

Take the observations from the decomposition contexts. End the process with a finish call carrying the ground-truth answer; after the finish call the reasoning is complete, marked with <|completed|>. Follow the format strictly.

[Question]
{{question}}

[Ground-truth answer]
{{answer}}

[Decompositions]
{{decomposition}}"""

JUDGE_PROMPT = """Decide whether the prediction answers the question correctly, judged against the gold answer. Wording differences do not matter; the meaning must match.

Reply with a verdict as the first word of your reply: YES if the prediction is correct, NO if it is not. Then give a one-sentence rationale.

[Question]
{question}

[Gold answer]
{gold}

[Prediction]
{prediction}"""

OBSERVATION_PROMPT = (
    "Answer the query using only the documents provided in the message. "
    "Be direct and factual. If the documents do not contain the answer, say what is missing "
    "instead of guessing."
)

ANSWER_SYSTEM = "You extract the shortest possible final answer. Follow the instructions in the message exactly."

JUDGE_SYSTEM = "You are a strict grader of question answering predictions."

_PLACEHOLDERS = ("question", "answer", "reference_answer", "decomposition", "gold", "prediction")


class UnrenderedPlaceholder(RagchainError):
    pass


def render_template(template: str, **substitutions: str) -> str:
    """Substitute {name} tokens literally; refuse to leave a known token behind."""
    rendered = template
    for name, value in substitutions.items():
        token = "{" + name + "}"
        if token not in rendered:
            raise UnrenderedPlaceholder(f"template has no {token} placeholder")
        rendered = rendered.replace(token, value)
    for name in _PLACEHOLDERS:
        token = "{" + name + "}"
        if token in rendered:
            raise UnrenderedPlaceholder(f"placeholder {token} was not substituted")
    return rendered


@dataclass(frozen=True)
class PromptSet:
    """The four templates driving construction, inference, finalization and ablation."""

    data_construction: str = DATA_CONSTRUCTION_PROMPT
    inference: str = INFERENCE_PROMPT
    answer: str = ANSWER_PROMPT
    ablation: str = ABLATION_PROMPT

    @classmethod
    def from_files(
        cls,
        data_construction: str | Path | None = None,
        inference: str | Path | None = None,
        answer: str | Path | None = None,
        ablation: str | Path | None = None,
    ) -> "PromptSet":
        def read(path: str | Path | None, default: str) -> str:
            return Path(path).read_text(encoding="utf-8") if path else default

        return cls(
            data_construction=read(data_construction, DATA_CONSTRUCTION_PROMPT),
            inference=read(inference, INFERENCE_PROMPT),
            answer=read(answer, ANSWER_PROMPT),
            ablation=read(ablation, ABLATION_PROMPT),
        )
