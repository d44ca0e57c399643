"""Prompt templates used by annotation, judging, and feedback generation.

Every template lives here so the exact wording stays in one place; the rest
of the package treats these as opaque strings.
"""

from __future__ import annotations

import json
from collections.abc import Sequence

SYSTEM_INSTRUCTION = (
    "Please reason step by step, and put your final answer within \\boxed{}."
)

_ANNOTATION_TASK = (
    "[TASK]\n"
    "You'll be given a math question. Your task is to output:\n"
    "(1) <skill> list here up to five skill(s) that are required to solve this"
    " problem, seperated by commas </skill>.\n"
    "(2) <reason> reason here why these skills are needed </reason>.\n"
)

_JUDGE_TASK = (
    "[TASK]\n"
    "You'll be given a math question and a step-by-step solution written by a"
    " Small Language Model. Your task is to output:\n"
    "(1) <judge> judge here whether the solution is correct or incorrect"
    " </judge>\n"
    "(2) <reason> if it's incorrect, reason here why the solution is incorrect"
    " </reason>,\n"
    "(3) <skill> list here what skill(s) should the SLM enhance in order to"
    " answer correctly, seperated by commas </skill>.\n"
)

_FEEDBACK_TASK = (
    "[TASK]\n"
    "You'll be given a math question, a step-by-step solution written by a SLM,"
    " a step that is likely to be incorrect, the missing skills in the solution"
    " that you identified earlier, and the skill-rated in-context examples."
    " Your task is to output:\n"
    "(1) <comment> comment here about the SLM solution </comment>\n"
    "(2) <hint> write here compactly the hints we should give the SLM to help"
    " it correctly answer this question next time. You should not include the"
    " question or answer of this specific question. </hint>\n"
)


def _skill_list_section(skill_list: Sequence[str]) -> str:
    listing = json.dumps(list(skill_list), indent=2)
    return (
        "[SKILL LIST]\n"
        "You should only choose the skills from this list:\n"
        f"{listing}\n"
    )


def annotation_prompt(question_text: str, skill_list: Sequence[str]) -> str:
    """Prompt asking for the skills a question requires."""
    return (
        f"{_ANNOTATION_TASK}\n"
        f"{_skill_list_section(skill_list)}\n"
        "[QUESTION]\n"
        f"{question_text}\n\n"
        "[REASON AND SKILL(S)]\n"
    )


def missing_skill_prompt(
    question_text: str, solution: str, skill_list: Sequence[str]
) -> str:
    """Prompt asking a judge to grade a solution and name the missing skills."""
    return (
        f"{_JUDGE_TASK}\n"
        f"{_skill_list_section(skill_list)}\n"
        "[QUESTION]\n"
        f"{question_text}\n\n"
        "[MODEL_SOLUTION]\n"
        f"{solution}\n\n"
        "[REASON AND SKILL(S)]\n"
    )


def feedback_prompt(
    question_text: str,
    solution: str,
    incorrect_step: str,
    missing_skills: Sequence[str],
) -> str:
    """Prompt asking for compact natural-language hints on a flawed solution."""
    return (
        f"{_FEEDBACK_TASK}\n"
        "[QUESTION]\n"
        f"{question_text}\n\n"
        "[SOLUTION]\n"
        f"{solution}\n\n"
        "[INCORRECT_STEP]\n"
        f"{incorrect_step}\n\n"
        "[MISSING_SKILLS]\n"
        f"{','.join(missing_skills)}\n\n"
        "[COMMENT_AND_HINT]\n"
    )
