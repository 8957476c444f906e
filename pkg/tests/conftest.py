from __future__ import annotations

import pytest

from ragchain.rag import Document


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = {}
    for outcome, status in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL"),
                            ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if getattr(report, "when", "call") not in ("call", "setup"):
                continue
            name = nodeid.split("::")[-1]
            rows.setdefault(name, status)
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(rows):
            terminalreporter.write_line(f"{rows[name]}  {name}")


def make_documents(question_id: str, bodies: list[str], gold: int = 1) -> list[Document]:
    return [
        Document(
            id=f"{question_id}::d{i}",
            title=f"Passage {i}",
            body=body,
            label="gold" if i < gold else "distractor",
            source_question_id=question_id,
        )
        for i, body in enumerate(bodies)
    ]


@pytest.fixture
def five_doc_corpus():
    from ragchain.rag import CorpusView

    docs = make_documents(
        "q-five",
        [
            "The quick brown fox jumps over the lazy dog near the riverbank.",
            "A study of fox behavior in urban settings shows foxes adapt quickly.",
            "Dogs and cats are common household pets in many countries.",
            "The river flows through the valley past the old mill and the bridge.",
            "Quantum computing uses qubits for parallel computation at scale.",
        ],
        gold=1,
    )
    return CorpusView(question_id="q-five", documents=tuple(docs), approx_token_count=0)
