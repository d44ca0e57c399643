"""Synthetic corpora plus scripted mock backends for whole-pipeline tests.

Questions carry machine-readable markers so mock replies can be computed
from prompt text alone:

  [needs:skill_a,skill_b]  required skills, embedded in the question text
  [key:ansN]               the gold answer for that question
  [teaches:skill_a]        embedded in each example's solution

The "any" world answers correctly iff at least one needed skill is taught
by some in-context example; the "all" world requires every needed skill
and, when wrong, reports which needed skills were covered so a judge can
reveal exactly one more per round.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from adaptmi.backend import MockRewardRule, MockRule, MockScript
from adaptmi.corpus import ExampleRecord, Question, SkillBank, build_example_bank

SKILLS = (
    "linear_equations",
    "ratio_reasoning",
    "prime_factorization",
    "angle_chasing",
    "fraction_arithmetic",
    "modular_arithmetic",
)
SUBJECTS = ("algebra", "geometry", "number_theory")
DEFAULT_SKILLS = (SKILLS[0], SKILLS[1])

NEEDS_RE = re.compile(r"\[needs:([\w,]*)\]")
TEACH_RE = re.compile(r"\[teaches:(\w+)\]")
KEY_RE = re.compile(r"\[key:(\w+)\]")
COVERED_RE = re.compile(r"\[covered:([\w,]*)\]")

HIGH_REWARD = 0.98
LOW_REWARD = 0.2

WRONG_REPLY = "I tried something.\n\nThe final answer is \\boxed{unsure}."


def _split_csv(raw: str) -> list[str]:
    return [part for part in raw.split(",") if part]


def make_questions(count: int, skills_for) -> list[Question]:
    questions = []
    for i in range(count):
        skills = skills_for(i)
        questions.append(
            Question(
                id=f"q{i:03d}",
                subject=SUBJECTS[i % len(SUBJECTS)],
                text=(
                    f"Work out quantity number {i} from the given data. "
                    f"[needs:{','.join(skills)}] [key:ans{i}]"
                ),
                gold_answer=f"ans{i}",
                skills=tuple(skills),
            )
        )
    return questions


def make_pool() -> tuple[list[ExampleRecord], list[str]]:
    """Two examples per skill plus five fixed defaults teaching two skills."""
    pool = []
    for skill in SKILLS:
        for j in (1, 2):
            pool.append(
                ExampleRecord(
                    id=f"ex_{skill}_{j}",
                    subject="algebra",
                    text=f"Practice drill {j} for {skill}.",
                    solution=(
                        f"Apply {skill} carefully. [teaches:{skill}]\n\n"
                        "The answer is \\boxed{drill}."
                    ),
                    skills=(skill,),
                )
            )
    fixed_ids = []
    for i in range(1, 6):
        skill = DEFAULT_SKILLS[i % 2]
        fid = f"fix{i}"
        fixed_ids.append(fid)
        pool.append(
            ExampleRecord(
                id=fid,
                subject="algebra",
                text=f"Warm-up problem {i}.",
                solution=(
                    f"Routine use of {skill}. [teaches:{skill}]\n\n"
                    "The answer is \\boxed{warmup}."
                ),
                skills=(skill,),
            )
        )
    return pool, fixed_ids


def make_skill_bank() -> SkillBank:
    return SkillBank.from_mapping({subject: list(SKILLS) for subject in SUBJECTS})


def _needed(text: str) -> set[str]:
    return set(_split_csv(NEEDS_RE.findall(text)[-1]))


def _taught(text: str) -> set[str]:
    return set(TEACH_RE.findall(text))


def _key(text: str) -> str:
    return KEY_RE.findall(text)[-1]


def _is_judge_prompt(text: str) -> bool:
    return "[MODEL_SOLUTION]" in text


def _correct_reply(key: str) -> str:
    return f"Use the drilled technique.\n\nThe final answer is \\boxed{{{key}}}."


def _any_skill_chat(text: str) -> str:
    if _needed(text) & _taught(text):
        return _correct_reply(_key(text))
    return WRONG_REPLY


def _all_skill_chat(text: str) -> str:
    needed = _needed(text)
    taught = _taught(text)
    if needed <= taught:
        return _correct_reply(_key(text))
    covered = ",".join(sorted(needed & taught))
    return (
        f"Partial attempt. [covered:{covered}]\n\n"
        "The final answer is \\boxed{unsure}."
    )


def _solution_part(text: str) -> str:
    return text.split("[MODEL_SOLUTION]", 1)[1]


def _any_skill_judge(text: str) -> str:
    solution = _solution_part(text)
    if f"\\boxed{{{_key(text)}}}" in solution:
        return "<judge> correct </judge>"
    needed = NEEDS_RE.findall(text)[-1]
    return (
        "<judge> incorrect </judge>\n"
        "<reason> the needed techniques were not applied </reason>\n"
        f"<skill> {needed} </skill>"
    )


def _all_skill_judge(text: str) -> str:
    solution = _solution_part(text)
    if f"\\boxed{{{_key(text)}}}" in solution:
        return "<judge> correct </judge>"
    needed = _split_csv(NEEDS_RE.findall(text)[-1])
    matched = COVERED_RE.search(solution)
    covered = _split_csv(matched.group(1)) if matched else []
    reveal = list(covered)
    for skill in needed:
        if skill not in reveal:
            reveal.append(skill)
            break
    return (
        "<judge> incorrect </judge>\n"
        "<reason> coverage is incomplete </reason>\n"
        f"<skill> {','.join(reveal)} </skill>"
    )


def _reward_fn(question: str, steps) -> list[float]:
    key = _key(question)
    value = HIGH_REWARD if f"\\boxed{{{key}}}" in steps[-1] else LOW_REWARD
    return [value] * len(steps)


def make_script(mode: str = "any") -> MockScript:
    chat = _any_skill_chat if mode == "any" else _all_skill_chat
    judge = _any_skill_judge if mode == "any" else _all_skill_judge
    return MockScript(
        rules=(
            MockRule(match=_is_judge_prompt, reply=judge),
            MockRule(match=lambda text: "[key:" in text, reply=chat),
        ),
        default_reply="No idea.\n\nThe final answer is \\boxed{blank}.",
        reward_rules=(MockRewardRule(match=lambda text: True, rewards=_reward_fn),),
        default_rewards=(LOW_REWARD,),
    )


def build_world(mode: str = "any", count: int = 60):
    """Return (questions, pool, bank, skill_bank, script) for one world."""
    if mode == "any":

        def skills_for(i: int) -> list[str]:
            if i % 2 == 0:
                return [SKILLS[i % 6]]
            return [SKILLS[i % 6], SKILLS[(i + 2) % 6]]

    else:

        def skills_for(i: int) -> list[str]:
            width = i % 3 + 1
            return [SKILLS[(i + j) % 6] for j in range(width)]

    questions = make_questions(count, skills_for)
    pool, fixed_ids = make_pool()
    bank = build_example_bank(pool, fixed_ids)
    return questions, pool, bank, make_skill_bank(), make_script(mode)


def regex_script_dict() -> dict:
    """JSON-serializable version of the "any" world script for CLI runs."""
    return {
        "rules": [
            {
                "match": r"\[key:(\w+)\][\s\S]*\[MODEL_SOLUTION\][\s\S]*\\boxed\{\1\}",
                "reply": "<judge> correct </judge>",
            },
            {
                "match": r"\[needs:([\w,]+)\][\s\S]*\[MODEL_SOLUTION\]",
                "reply": "<judge> incorrect </judge>\n<skill> \\1 </skill>",
            },
            {
                "match": (
                    r"\[teaches:(\w+)\][\s\S]*\[needs:[\w,]*\b\1\b[\w,]*\]"
                    r"[\s\S]*\[key:(\w+)\]"
                ),
                "reply": (
                    "Use the drilled technique.\n\n"
                    "The final answer is \\boxed{\\2}."
                ),
            },
            {
                "match": r"\[key:(\w+)\]",
                "reply": WRONG_REPLY,
            },
        ],
        "default_reply": "No idea.\n\nThe final answer is \\boxed{blank}.",
        "reward_rules": [
            {
                "match": r"\[key:(\w+)\][\s\S]*\\boxed\{\1\}",
                "rewards": [HIGH_REWARD],
            }
        ],
        "default_rewards": [LOW_REWARD],
    }


def write_corpus(tmp_path: Path, questions, pool, fixed_ids=None):
    """Write question/example JSONL files plus a skill bank; returns paths."""
    questions_path = tmp_path / "questions.jsonl"
    with questions_path.open("w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(
                json.dumps(
                    {
                        "id": q.id,
                        "subject": q.subject,
                        "question": q.text,
                        "answer": q.gold_answer,
                        "skills": list(q.skills),
                    }
                )
                + "\n"
            )
    examples_path = tmp_path / "examples.jsonl"
    with examples_path.open("w", encoding="utf-8") as fh:
        for e in pool:
            fh.write(
                json.dumps(
                    {
                        "id": e.id,
                        "subject": e.subject,
                        "question": e.text,
                        "answer": "drill",
                        "solution": e.solution,
                        "skills": list(e.skills),
                    }
                )
                + "\n"
            )
    bank_path = tmp_path / "skill_bank.json"
    bank_path.write_text(
        json.dumps({subject: list(SKILLS) for subject in SUBJECTS}),
        encoding="utf-8",
    )
    return questions_path, examples_path, bank_path
