#!/usr/bin/env python3
"""Walk one scripted multi-hop question through the inference loop and print the chain.

Shows the library API directly, without the CLI: a scripted reasoning
model issues two searches and a finish, the retrieval engine answers each
query from a three-document corpus, and the answer model compresses the
finish answer.

    python scripts/replay_inference_trace.py
"""
from __future__ import annotations

from ragchain.backends import ScriptedBackend
from ragchain.inference import run_inference
from ragchain.prompts import PromptSet
from ragchain.rag import CorpusView, Document, RagEngine, corpus_tokens, default_token_counter

QUESTION = "In what county is the painter's birthplace located?"

DOCUMENTS = (
    Document(
        id="demo::d0",
        title="The Painter",
        body="The painter was born in Millbrook and trained in the capital before "
             "returning to the region for the rest of a long career.",
        label="gold",
        source_question_id="demo",
    ),
    Document(
        id="demo::d1",
        title="Millbrook",
        body="Millbrook is a small village seated in Harren County, known for its "
             "bridges and an annual spring fair.",
        label="gold",
        source_question_id="demo",
    ),
    Document(
        id="demo::d2",
        title="Harren County",
        body="Harren County lies along the river and contains a dozen villages.",
        label="distractor",
        source_question_id="demo",
    ),
)

MODEL_TURNS = (
    "Thought 1: I need the painter's birthplace before I can find its county.\n"
    'Action 1: {"function": "search", "parameters": {"query": "Where was the painter born?"}}',
    "Thought 2: Millbrook is the birthplace; now I need its county.\n"
    'Action 2: {"function": "search", "parameters": {"query": "Which county is Millbrook in?"}}',
    "Thought 3: That settles it.\n"
    'Action 3: {"function": "finish", "parameters": '
    '{"answer": "The painter\'s birthplace, Millbrook, is in Harren County."}}',
)

OBSERVATIONS = (
    "The painter was born in Millbrook.",
    "Millbrook is seated in Harren County.",
)


def main() -> None:
    view = CorpusView(
        question_id="demo",
        documents=DOCUMENTS,
        approx_token_count=corpus_tokens(DOCUMENTS, default_token_counter),
    )
    record = run_inference(
        question=QUESTION,
        corpus=view,
        model=ScriptedBackend([("*", turn) for turn in MODEL_TURNS]),
        ans_model=ScriptedBackend([("*", "Harren County")]),
        prompts=PromptSet(),
        rag=RagEngine(
            generator=ScriptedBackend([("*", obs) for obs in OBSERVATIONS]),
            k=2,
        ),
        t_max=10,
    )
    print(f"question: {QUESTION}")
    for step in record.chain.steps:
        print(f"\nThought {step.index}: {step.thought}")
        print(f"Action {step.index}: {step.action}")
        if step.observation is not None:
            print(f"Observation {step.index}: {step.observation}")
    print(f"\nstatus: {record.chain.status.value} in {record.step_count} steps")
    print(f"reference answer: {record.reference_answer}")
    print(f"final answer: {record.final_answer}")


if __name__ == "__main__":
    main()
