from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptmi.backend import MockRule, MockScript, MockChatBackend
from adaptmi.corpus import (
    ExampleRecord,
    Question,
    SkillBank,
    annotate_corpus,
    annotate_skills,
    build_example_bank,
    load_corpus,
    normalize_skill_name,
    parse_tagged_field,
)
from adaptmi.errors import AnnotationError, ParseError, ValidationError

from conftest import make_example, make_question


class TestNormalize:
    def test_spaces_become_underscores(self):
        assert normalize_skill_name("Arithmetic Skills") == "arithmetic_skills"

    def test_whitespace_runs_collapse(self):
        assert normalize_skill_name("  modular   arithmetic \t") == "modular_arithmetic"

    def test_already_normalized_unchanged(self):
        assert normalize_skill_name("solving_equations") == "solving_equations"

    @given(st.text(max_size=40))
    def test_idempotent(self, name):
        once = normalize_skill_name(name)
        assert normalize_skill_name(once) == once


class TestTypes:
    def test_question_normalizes_skills(self):
        q = make_question(skills=["Number Theory", "basic_arithmetic"])
        assert q.skills == ("number_theory", "basic_arithmetic")

    def test_question_rejects_six_skills(self):
        with pytest.raises(ValidationError):
            make_question(skills=[f"s{i}" for i in range(6)])

    def test_example_requires_one_boxed_answer(self):
        with pytest.raises(ValidationError):
            ExampleRecord("e1", "algebra", "q", "no box at all", ("a",))
        with pytest.raises(ValidationError):
            ExampleRecord(
                "e1", "algebra", "q", "\\boxed{1} and \\boxed{2}", ("a",)
            )

    def test_example_rejects_empty_solution(self):
        with pytest.raises(ValidationError):
            ExampleRecord("e1", "algebra", "q", "   ", ("a",))


class TestLoadCorpus:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert load_corpus(path, "questions") == []

    def test_single_question_normalized(self, tmp_path):
        path = tmp_path / "one.jsonl"
        row = {
            "id": "q1",
            "subject": "algebra",
            "question": "1+1=?",
            "answer": "2",
            "skills": ["Arithmetic Skills"],
        }
        path.write_text(json.dumps(row) + "\n", encoding="utf-8")
        [q] = load_corpus(path, "questions")
        assert q.skills == ("arithmetic_skills",)
        assert q.gold_answer == "2"

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        row = {"id": "q1", "subject": "algebra", "question": "x", "answer": "1"}
        path.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
        with pytest.raises(ValidationError, match="q1"):
            load_corpus(path, "questions")

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = {"id": "q1", "subject": "algebra", "question": "x", "answer": "1"}
        path.write_text(json.dumps(good) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":2"):
            load_corpus(path, "questions")

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "missing.jsonl"
        path.write_text(json.dumps({"id": "q1", "subject": "x"}) + "\n")
        with pytest.raises(ParseError, match=":1"):
            load_corpus(path, "questions")

    def test_examples_need_solution(self, tmp_path):
        path = tmp_path / "ex.jsonl"
        row = {"id": "e1", "subject": "algebra", "question": "x", "answer": "1"}
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(ParseError, match="solution"):
            load_corpus(path, "examples")

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValidationError):
            load_corpus(tmp_path / "nope.jsonl", "mysteries")


class TestExampleBank:
    def test_index_membership(self):
        e1 = make_example("e1", skills=("a",))
        e2 = make_example("e2", skills=("a", "b"))
        bank = build_example_bank([e1, e2])
        assert bank.candidates("a") == (e1, e2)
        assert bank.candidates("b") == (e2,)
        assert bank.candidates("c") == ()

    def test_empty_pool(self):
        bank = build_example_bank([], [])
        assert bank.index == {}
        assert bank.fixed_defaults == ()

    def test_unresolvable_fixed_id(self):
        with pytest.raises(ValidationError, match="e9"):
            build_example_bank([make_example("e1")], ["e9"])

    def test_fixed_defaults_keep_order(self):
        pool = [make_example(f"e{i}") for i in range(5)]
        bank = build_example_bank(pool, ["e3", "e0"])
        assert [r.id for r in bank.fixed_defaults] == ["e3", "e0"]

    def test_duplicate_fixed_ids_rejected(self):
        pool = [make_example("e1")]
        with pytest.raises(ValidationError, match="distinct"):
            build_example_bank(pool, ["e1", "e1"])

    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["a", "b", "c", "d"]),
                st.sets(st.sampled_from(["s1", "s2", "s3"]), max_size=3),
            ),
            max_size=6,
            unique_by=lambda t: t[0],
        )
    )
    def test_membership_round_trip(self, cases):
        pool = [
            make_example(eid, skills=tuple(sorted(skills)))
            for eid, skills in cases
        ]
        bank = build_example_bank(pool)
        for record in pool:
            for skill in ("s1", "s2", "s3"):
                in_index = record in bank.candidates(skill)
                assert in_index == (skill in record.skills)


class TestSkillBank:
    def test_check_covers_accepts_listed_skills(self):
        bank = SkillBank.from_mapping({"algebra": ["a", "b"]})
        bank.check_covers([make_question(skills=["a"])])

    def test_check_covers_rejects_unknown(self):
        bank = SkillBank.from_mapping({"algebra": ["a"]})
        with pytest.raises(ValidationError, match="q1"):
            bank.check_covers([make_question(skills=["z"])])


class TestParseTaggedField:
    def test_judge_example(self):
        assert parse_tagged_field("<judge> incorrect </judge>", "judge") == "incorrect"

    def test_absent_tag(self):
        assert parse_tagged_field("abc", "skill") is None

    def test_first_match_wins(self):
        text = "<skill>a</skill><skill>b</skill>"
        assert parse_tagged_field(text, "skill") == "a"

    def test_spaces_inside_brackets(self):
        text = "< skill > modular_arithmetic, number_theory < /skill >"
        assert (
            parse_tagged_field(text, "skill")
            == "modular_arithmetic, number_theory"
        )

    def test_multiline_content(self):
        text = "<reason>\nline one\nline two\n</reason>"
        assert parse_tagged_field(text, "reason") == "line one\nline two"


def scripted(reply_or_rules, default=""):
    if isinstance(reply_or_rules, str):
        return MockChatBackend(MockScript(default_reply=reply_or_rules))
    return MockChatBackend(MockScript(rules=tuple(reply_or_rules), default_reply=default))


class TestAnnotateSkills:
    SKILLS = ["modular_arithmetic", "number_theory", "solving_equations"]

    def test_comma_separated_tag_reply(self):
        llm = scripted("<skill> modular_arithmetic, number_theory </skill>")
        got = annotate_skills(make_question(), self.SKILLS, llm)
        assert got == ["modular_arithmetic", "number_theory"]

    def test_six_skills_capped_to_five(self):
        skill_list = [f"s{i}" for i in range(8)]
        llm = scripted("<skill> s0, s1, s2, s3, s4, s5 </skill>")
        got = annotate_skills(make_question(), skill_list, llm)
        assert got == ["s0", "s1", "s2", "s3", "s4"]

    def test_unparseable_reply_errors_after_retries(self):
        calls = []

        def counting(text):
            calls.append(text)
            return "no tags here"

        llm = scripted([MockRule(match=lambda t: True, reply=counting)])
        with pytest.raises(AnnotationError) as exc:
            annotate_skills(make_question(), self.SKILLS, llm, retries=2)
        assert len(calls) == 3
        assert exc.value.raw_reply == "no tags here"

    def test_recovers_on_retry(self):
        replies = iter(["garbage", "<skill> number_theory </skill>"])
        llm = scripted([MockRule(match=lambda t: True, reply=lambda t: next(replies))])
        assert annotate_skills(make_question(), self.SKILLS, llm) == ["number_theory"]

    def test_outside_list_dropped(self):
        llm = scripted("<skill> number_theory, knitting </skill>")
        assert annotate_skills(make_question(), self.SKILLS, llm) == ["number_theory"]

    def test_all_dropped_is_error(self):
        llm = scripted("<skill> knitting </skill>")
        with pytest.raises(AnnotationError):
            annotate_skills(make_question(), self.SKILLS, llm, retries=0)

    def test_empty_skill_list_rejected(self):
        llm = scripted("<skill> a </skill>")
        with pytest.raises(ValidationError):
            annotate_skills(make_question(), [], llm)

    def test_prompt_has_expected_sections(self):
        seen = {}

        def capture(text):
            seen["prompt"] = text
            return "<skill> number_theory </skill>"

        llm = scripted([MockRule(match=lambda t: True, reply=capture)])
        annotate_skills(make_question(text="What is 7 mod 3?"), self.SKILLS, llm)
        prompt = seen["prompt"]
        for section in ("[TASK]", "[SKILL LIST]", "[QUESTION]", "[REASON AND SKILL(S)]"):
            assert section in prompt
        assert prompt.index("[TASK]") < prompt.index("[SKILL LIST]")
        assert prompt.index("[SKILL LIST]") < prompt.index("[QUESTION]")
        assert "What is 7 mod 3?" in prompt
        assert '"modular_arithmetic"' in prompt

    @given(
        st.lists(
            st.sampled_from(["modular_arithmetic", "number_theory", "knitting"]),
            min_size=1,
            max_size=7,
        )
    )
    def test_output_subset_of_list_and_capped(self, reply_skills):
        llm = scripted(f"<skill> {', '.join(reply_skills)} </skill>")
        try:
            got = annotate_skills(make_question(), self.SKILLS, llm, retries=0)
        except AnnotationError:
            assert all(s == "knitting" for s in reply_skills)
            return
        assert 1 <= len(got) <= 5
        assert set(got) <= set(self.SKILLS)


class TestAnnotateCorpus:
    def test_results_in_input_order(self):
        bank = SkillBank.from_mapping({"algebra": ["a", "b"]})
        llm = scripted("<skill> a </skill>")
        questions = [make_question(f"q{i}") for i in range(4)]
        out = annotate_corpus(questions, bank, llm, max_workers=3)
        assert [q.id for q in out] == ["q0", "q1", "q2", "q3"]
        assert all(q.skills == ("a",) for q in out)
