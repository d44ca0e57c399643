"""Shared corpus factories for the test suite."""

from __future__ import annotations

import pytest

from adaptmi.corpus import ExampleRecord, Question, build_example_bank


def make_question(qid="q1", subject="algebra", text="1+1=?", answer="2", skills=()):
    return Question(
        id=qid, subject=subject, text=text, gold_answer=answer, skills=tuple(skills)
    )


def make_example(eid="e1", subject="algebra", skills=("arithmetic",), answer="4"):
    return ExampleRecord(
        id=eid,
        subject=subject,
        text=f"Sample problem {eid}",
        solution=f"Work it out.\n\nThe answer is \\boxed{{{answer}}}.",
        skills=tuple(skills),
    )


@pytest.fixture
def small_bank():
    """Singleton banks for skills a and b plus five fixed defaults."""
    e1 = make_example("e1", skills=("a",))
    e2 = make_example("e2", skills=("b",))
    defaults = [make_example(f"f{i}", skills=("c",)) for i in range(1, 6)]
    pool = [e1, e2, *defaults]
    return build_example_bank(pool, [f"f{i}" for i in range(1, 6)]), pool
