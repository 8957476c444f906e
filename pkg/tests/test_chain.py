import json

import pytest
from hypothesis import given, strategies as st

from ragchain.chain import (
    ChainStatus,
    Finish,
    MissingFinish,
    MissingObservation,
    MissingParameter,
    NoActionFound,
    ReasoningChain,
    ReasoningStep,
    Search,
    UnknownActionType,
    action_from_dict,
    action_to_dict,
    action_to_json,
    chain_from_dict,
    chain_to_dict,
    parse_step,
    parse_transcript,
    render_history,
)

printable_text = st.text(
    alphabet=st.characters(whitelist_categories=("L", "N", "P", "Zs")),
    min_size=1,
    max_size=60,
).filter(lambda s: s.strip())


def make_chain(n_search, finish=True, t_max=10, question="What is the answer?"):
    steps = [
        ReasoningStep(i, f"thought {i}", Search(f"query {i}"), f"observation {i}")
        for i in range(1, n_search + 1)
    ]
    if finish:
        steps.append(ReasoningStep(n_search + 1, "conclude", Finish("the answer")))
        status = ChainStatus.FINISHED
    else:
        status = ChainStatus.EXHAUSTED if n_search == t_max else ChainStatus.ABORTED
    return ReasoningChain(question=question, steps=tuple(steps), status=status, t_max=t_max)


# --- actions -----------------------------------------------------------------


def test_action_dict_shapes():
    assert action_to_dict(Search("who wrote it")) == {
        "function": "search",
        "parameters": {"query": "who wrote it"},
    }
    assert action_to_dict(Finish("the answer")) == {
        "function": "finish",
        "parameters": {"answer": "the answer"},
    }


def test_action_trims_and_rejects_empty():
    assert Search("  padded  ").query == "padded"
    with pytest.raises(ValueError):
        Search("   ")
    with pytest.raises(ValueError):
        Finish("")


def test_action_from_dict_errors():
    with pytest.raises(UnknownActionType):
        action_from_dict({"function": "lookup", "parameters": {"query": "x"}})
    with pytest.raises(MissingParameter):
        action_from_dict({"function": "search", "parameters": {}})
    with pytest.raises(MissingParameter):
        action_from_dict({"function": "finish", "parameters": {"answer": "  "}})


def test_action_name_tolerance():
    assert action_from_dict({"name": "search", "parameters": {"query": "x"}}) == Search("x")
    assert action_from_dict({"type": "finish()", "parameters": {"answer": "y"}}) == Finish("y")


@given(printable_text)
def test_search_round_trip(query):
    action = Search(query)
    assert action_from_dict(json.loads(action_to_json(action))) == action


@given(printable_text)
def test_finish_round_trip(answer):
    action = Finish(answer)
    assert action_from_dict(json.loads(action_to_json(action))) == action


# --- parse_step ----------------------------------------------------------------


def test_parse_step_single_quoted_search():
    raw = (
        "Thought 1: So I need to find out where the author was educated. "
        "First, I need to know who the author is.\n"
        "Action 1: {'function': 'search', 'parameters': "
        "{'query': 'Who is the author of Hannibal and Scipio?'}}"
    )
    thought, action = parse_step(raw)
    assert thought.startswith("So I need to find out")
    assert action == Search("Who is the author of Hannibal and Scipio?")


def test_parse_step_finish():
    raw = (
        "Thought 4: I have the information I need.\n"
        "Action 4: {'function': 'finish', 'parameters': "
        "{'answer': 'Thomas Nabbes was educated at Exeter College, Oxford.'}}"
    )
    thought, action = parse_step(raw)
    assert action == Finish("Thomas Nabbes was educated at Exeter College, Oxford.")


def test_parse_step_no_action():
    with pytest.raises(NoActionFound):
        parse_step("Let me think about this question with no action emitted.")


def test_parse_step_quote_styles_agree():
    single = "Thought 1: t\nAction 1: {'function': 'search', 'parameters': {'query': 'abc'}}"
    double = 'Thought 1: t\nAction 1: {"function": "search", "parameters": {"query": "abc"}}'
    assert parse_step(single) == parse_step(double)


def test_parse_step_markdown_and_missing_numbering():
    raw = '**Thought:** check the title\n**Action:** {"function": "search", "parameters": {"query": "t"}}'
    thought, action = parse_step(raw)
    assert thought == "check the title"
    assert action == Search("t")


def test_parse_step_discards_trailing_text():
    raw = (
        "Thought 2: ok\n"
        'Action 2: {"function": "finish", "parameters": {"answer": "x"}}\n'
        "Observation 2: should be ignored"
    )
    _, action = parse_step(raw)
    assert action == Finish("x")


def test_parse_step_takes_first_decodable_action():
    raw = (
        "Thought 1: two actions follow\n"
        'Action 1: {"function": "search", "parameters": {"query": "first"}}\n'
        'Action 2: {"function": "search", "parameters": {"query": "second"}}'
    )
    _, action = parse_step(raw)
    assert action == Search("first")


def test_parse_step_unknown_function_raises():
    raw = 'Thought 1: t\nAction 1: {"function": "calculate", "parameters": {"query": "1+1"}}'
    with pytest.raises(UnknownActionType):
        parse_step(raw)


def test_parse_step_missing_query_raises():
    raw = 'Thought 1: t\nAction 1: {"function": "search", "parameters": {}}'
    with pytest.raises(MissingParameter):
        parse_step(raw)


def test_parse_step_skips_non_action_objects():
    raw = (
        "Thought 1: an inline table {'rows': 3} precedes the call\n"
        "Action 1: {'function': 'search', 'parameters': {'query': 'real'}}"
    )
    _, action = parse_step(raw)
    assert action == Search("real")


@given(printable_text)
def test_parse_round_trip_through_rendered_turn(query):
    action = Search(query)
    raw = f"Thought 1: probe\nAction 1: {action_to_json(action)}"
    thought, parsed = parse_step(raw)
    assert thought == "probe"
    assert parsed == action


# --- transcript parsing -------------------------------------------------------


TRANSCRIPT = (
    "Thought 1: I need the first hop.\n"
    "Action 1: {'function': 'search', 'parameters': {'query': 'hop one'}}\n"
    "Observation 1: first fact.\n"
    "Thought 2: Now the second hop.\n"
    "Action 2: {'function': 'search', 'parameters': {'query': 'hop two'}}\n"
    "Observation 2: second fact.\n"
    "Thought 3: I can conclude.\n"
    "Action 3: {'function': 'finish', 'parameters': {'answer': 'the answer'}}\n"
    "<|completed|>"
)


def test_parse_transcript_blocks():
    steps = parse_transcript(TRANSCRIPT)
    assert len(steps) == 3
    assert steps[0].observation == "first fact."
    assert steps[1].action == Search("hop two")
    assert steps[2].action == Finish("the answer")
    assert steps[2].observation is None


def test_parse_transcript_requires_finish():
    headless = TRANSCRIPT.split("Thought 3:")[0]
    with pytest.raises(MissingFinish):
        parse_transcript(headless)


def test_parse_transcript_requires_observations():
    raw = (
        "Thought 1: hop.\n"
        "Action 1: {'function': 'search', 'parameters': {'query': 'q'}}\n"
        "Thought 2: done.\n"
        "Action 2: {'function': 'finish', 'parameters': {'answer': 'a'}}"
    )
    with pytest.raises(MissingObservation):
        parse_transcript(raw)


def test_parse_transcript_ignores_text_after_finish():
    steps = parse_transcript(TRANSCRIPT + "\nThought 4: stray\ntrailing prose")
    assert len(steps) == 3


# --- chain invariants ----------------------------------------------------------


def test_finished_chain_shape():
    chain = make_chain(3)
    assert chain.status is ChainStatus.FINISHED
    assert chain.finish_answer == "the answer"
    assert [s.observation is not None for s in chain.steps] == [True, True, True, False]


def test_exhausted_chain_requires_full_length():
    chain = make_chain(4, finish=False, t_max=4)
    assert chain.status is ChainStatus.EXHAUSTED
    with pytest.raises(ValueError):
        ReasoningChain(
            question="q",
            steps=make_chain(4, finish=False, t_max=4).steps,
            status=ChainStatus.EXHAUSTED,
            t_max=10,
        )


def test_finish_must_be_last():
    steps = (
        ReasoningStep(1, "t", Finish("a")),
        ReasoningStep(2, "t", Search("q"), "o"),
    )
    with pytest.raises(ValueError):
        ReasoningChain(question="q", steps=steps, status=ChainStatus.FINISHED, t_max=5)


def test_chain_respects_t_max():
    with pytest.raises(ValueError):
        make_chain(5, t_max=5)  # 5 searches + finish = 6 > 5


def test_step_observation_rules():
    with pytest.raises(ValueError):
        ReasoningStep(1, "t", Search("q"), None)
    with pytest.raises(ValueError):
        ReasoningStep(1, "t", Finish("a"), "obs")


def test_aborted_chain_allows_partial_steps():
    chain = ReasoningChain(
        question="q",
        steps=(ReasoningStep(1, "t", Search("q"), "o"),),
        status=ChainStatus.ABORTED,
        t_max=10,
        abort_reason="no-action-found",
        raw_completion="garbled",
    )
    assert chain.finish_answer is None
    assert chain.abort_reason == "no-action-found"


@given(st.integers(min_value=0, max_value=8))
def test_chain_serialization_round_trip(n_search):
    chain = make_chain(n_search, t_max=10)
    reloaded = chain_from_dict(json.loads(json.dumps(chain_to_dict(chain))))
    assert reloaded == chain


# --- render_history -------------------------------------------------------------


def test_render_history_empty_chain():
    messages = render_history("INSTRUCTION", "the question", ())
    assert messages == [
        {"role": "system", "content": "INSTRUCTION"},
        {"role": "user", "content": "the question"},
    ]


def test_render_history_one_search_step():
    steps = (ReasoningStep(1, "look", Search("q1"), "saw it"),)
    messages = render_history("P", "x", steps)
    assert len(messages) == 4
    assert [m["role"] for m in messages] == ["system", "user", "assistant", "user"]
    assert messages[2]["content"].startswith("Thought 1: look\nAction 1: ")
    assert messages[3]["content"] == "Observation 1: saw it"


def test_render_history_is_deterministic():
    chain = make_chain(2)
    first = render_history("P", chain.question, chain)
    second = render_history("P", chain.question, chain)
    assert first == second


def test_render_history_full_chain_message_count():
    chain = make_chain(3)  # 3 searches + finish
    messages = render_history("P", chain.question, chain)
    # system + question + 4 assistant turns + 3 observations
    assert len(messages) == 9
    assert sum(1 for m in messages if m["role"] == "assistant") == 4
