import json

import pytest

from ragchain.backends import ScriptedBackend
from ragchain.chain import ChainStatus, Search
from ragchain.inference import (
    InferenceRecord,
    finalize_answer,
    record_from_dict,
    record_to_dict,
    run_inference,
)
from ragchain.prompts import PromptSet
from ragchain.rag import RagEngine

from replay_cases import COUNTY_CASE, HEADQUARTERS_CASE, REPLAY_CASES

PROMPTS = PromptSet()


def engine_for(case):
    return RagEngine(generator=case.generator_backend(), k=2)


def run_case(case, t_max=10):
    return run_inference(
        question=case.question,
        corpus=case.corpus_view(),
        model=case.model_backend(),
        ans_model=case.answer_backend(),
        prompts=PROMPTS,
        rag=engine_for(case),
        t_max=t_max,
    )


def test_replay_county_trace():
    record = run_case(COUNTY_CASE)
    assert record.chain.status is ChainStatus.FINISHED
    assert record.step_count == 4
    assert record.reference_answer == "Orleans County"
    assert record.final_answer == "Orleans County"


def test_replay_headquarters_trace():
    record = run_case(HEADQUARTERS_CASE)
    assert record.step_count == 4
    assert record.reference_answer == "Cologne, Germany"
    assert record.final_answer == "Cologne, Germany"


def test_immediate_finish_uses_answer_model():
    case = HEADQUARTERS_CASE
    model = ScriptedBackend(
        [("*", "Thought 1: direct\n"
               "Action 1: {'function': 'finish', 'parameters': "
               "{'answer': 'The employer is headquartered in Cologne, Germany.'}}")]
    )
    record = run_inference(
        case.question, case.corpus_view(), model, case.answer_backend(), PROMPTS,
        engine_for(case), t_max=10,
    )
    assert record.step_count == 1
    assert record.reference_answer == "The employer is headquartered in Cologne, Germany."
    assert record.final_answer == "Cologne, Germany"


def test_exhaustion_produces_empty_answer():
    case = COUNTY_CASE
    model = ScriptedBackend(
        [("*", f"Thought {i}: keep looking\n"
               f"Action {i}: {{'function': 'search', 'parameters': {{'query': 'again {i}'}}}}")
         for i in range(1, 5)]
    )
    rag = RagEngine(generator=ScriptedBackend([("*", "nothing")], exhaustion="repeat-last"))
    record = run_inference(
        case.question, case.corpus_view(), model, case.answer_backend(), PROMPTS, rag, t_max=4,
    )
    assert record.chain.status is ChainStatus.EXHAUSTED
    assert record.step_count == 4
    assert record.final_answer == ""
    assert record.reference_answer == ""


def test_aborted_run_attaches_error():
    case = COUNTY_CASE
    model = ScriptedBackend([("*", "no action here at all")])
    record = run_inference(
        case.question, case.corpus_view(), model, case.answer_backend(), PROMPTS,
        engine_for(case), t_max=5,
    )
    assert record.chain.status is ChainStatus.ABORTED
    assert record.error == "no-action-found"
    assert record.final_answer == ""


def test_every_search_query_appears_in_record():
    case = COUNTY_CASE
    issued = []

    class Recording(RagEngine):
        def observe(self, query, view):
            issued.append(query)
            return super().observe(query, view)

    record = run_inference(
        case.question, case.corpus_view(), case.model_backend(), case.answer_backend(),
        PROMPTS, Recording(generator=case.generator_backend()), t_max=10,
    )
    in_record = [s.action.query for s in record.chain.steps if isinstance(s.action, Search)]
    assert issued == in_record


def test_step_count_and_timings_align():
    record = run_case(COUNTY_CASE)
    assert record.step_count == len(record.chain.steps)
    assert len(record.step_timings) == record.step_count
    assert all(t >= 0 for t in record.step_timings)
    assert record.wall_time >= sum(record.step_timings) * 0.5


def test_finalize_answer_trims_to_single_line():
    ans = ScriptedBackend([("*", "  Exeter College, Oxford\nextra commentary")])
    result = finalize_answer("where?", "educated at Exeter College, Oxford.", ans, PROMPTS)
    assert result == "Exeter College, Oxford"


def test_finalize_answer_renders_question_and_reference():
    seen = {}

    class Recorder:
        def complete(self, conversation):
            seen["user"] = conversation[-1]["content"]
            return "short"

    finalize_answer("the question?", "the reference answer", Recorder(), PROMPTS)
    assert "the question?" in seen["user"]
    assert "the reference answer" in seen["user"]


def test_finalize_answer_echo_backend():
    class Echo:
        def complete(self, conversation):
            content = conversation[-1]["content"]
            return content.split("[Reference answer]\n")[1].splitlines()[0]

    assert finalize_answer("q?", "verbatim reference", Echo(), PROMPTS) == "verbatim reference"


def test_finalize_answer_requires_reference():
    with pytest.raises(ValueError):
        finalize_answer("q?", "   ", ScriptedBackend([("*", "x")]), PROMPTS)


def test_record_round_trip():
    for case in REPLAY_CASES:
        record = run_case(case)
        reloaded = record_from_dict(json.loads(json.dumps(record_to_dict(record))))
        assert reloaded == record


def test_record_invariants_enforced():
    record = run_case(COUNTY_CASE)
    with pytest.raises(ValueError):
        InferenceRecord(
            question_id=record.question_id,
            chain=record.chain,
            reference_answer="mismatching",
            final_answer=record.final_answer,
            step_count=record.step_count,
            wall_time=record.wall_time,
        )
