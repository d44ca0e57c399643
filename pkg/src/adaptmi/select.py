"""Few-shot example selection strategies and prompt assembly.

Five strategies: fixed, random, skill_based, adaptmi, adaptmi_plus. The
adaptive ones route easy questions to the fixed defaults and difficult ones
to skill-targeted retrieval; adaptmi_plus first asks a judge backend which
skills the prior response was missing.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Sequence
from dataclasses import dataclass, replace

from .corpus import (
    ExampleBank,
    ExampleRecord,
    Question,
    normalize_skill_name,
    parse_tagged_field,
)
from .errors import (
    FeedbackError,
    JudgmentError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .prompts import SYSTEM_INSTRUCTION, feedback_prompt, missing_skill_prompt
from .reward import DifficultyLabel

logger = logging.getLogger(__name__)

FIXED = "fixed"
RANDOM = "random"
SKILL_BASED = "skill_based"
ADAPTMI = "adaptmi"
ADAPTMI_PLUS = "adaptmi_plus"
STRATEGY_KINDS = (FIXED, RANDOM, SKILL_BASED, ADAPTMI, ADAPTMI_PLUS)

VERDICT_CORRECT = "correct"
VERDICT_INCORRECT = "incorrect"

MAX_INPUT_SKILLS = 5


@dataclass(frozen=True)
class SelectionStrategy:
    """Which selection rule to run, with its shot count and seed."""

    kind: str
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValidationError(f"unknown strategy kind {self.kind!r}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class FewShotSet:
    """Selected examples for one question plus selection provenance.

    ``strategy`` names the branch actually taken (an adaptive strategy
    records "fixed" or "skill_based"); ``fallback`` marks an adaptmi_plus
    judge failure that degraded to plain skill-based selection.
    """

    question_id: str
    examples: tuple[ExampleRecord, ...]
    strategy: str
    skills_used: tuple[str, ...] = ()
    fallback: bool = False

    def example_ids(self) -> list[str]:
        return [e.id for e in self.examples]


@dataclass(frozen=True)
class PromptSpec:
    """A fully assembled chat prompt: one system message, then the user turn."""

    system: str
    messages: tuple[tuple[str, str], ...]
    target_question: str

    def to_wire(self) -> list[dict]:
        return [{"role": role, "content": content} for role, content in self.messages]


def fixed_examples(bank: ExampleBank, question_id: str = "") -> FewShotSet:
    """The configured default examples, identical for every question."""
    return FewShotSet(question_id, bank.fixed_defaults, FIXED)


def random_examples(
    pool: Sequence[ExampleRecord],
    k: int,
    rng: random.Random,
    question_id: str = "",
) -> FewShotSet:
    """k distinct examples sampled uniformly without replacement."""
    if len(pool) < k:
        raise ValidationError(f"pool of {len(pool)} cannot provide {k} examples")
    return FewShotSet(question_id, tuple(rng.sample(list(pool), k)), RANDOM)


def skill_based_examples(
    skills: Sequence[str],
    bank: ExampleBank,
    rng: random.Random,
    k: int = 5,
    question_id: str = "",
) -> FewShotSet:
    """Retrieve k examples targeted at the given skills.

    With n skills: draw k-n padding samples from the first skill's
    candidates (with replacement, skipped while empty), then one sample per
    skill, deduplicate keeping first occurrences, and top up from the fixed
    defaults when fewer than k remain. An empty skill list yields the fixed
    defaults directly.
    """
    skills = [normalize_skill_name(s) for s in skills]
    if len(skills) > MAX_INPUT_SKILLS:
        raise ValidationError(
            f"at most {MAX_INPUT_SKILLS} skills supported, got {len(skills)}"
        )
    drawn: list[ExampleRecord] = []
    if skills:
        for _ in range(k - len(skills)):
            first = bank.candidates(skills[0])
            if first:
                drawn.append(rng.choice(first))
        for skill in skills:
            candidates = bank.candidates(skill)
            if candidates:
                drawn.append(rng.choice(candidates))
    chosen: list[ExampleRecord] = []
    seen: set[str] = set()
    for rec in drawn:
        if rec.id not in seen:
            seen.add(rec.id)
            chosen.append(rec)
    if len(chosen) < k:
        for rec in bank.fixed_defaults:
            if len(chosen) >= k:
                break
            if rec.id not in seen:
                seen.add(rec.id)
                chosen.append(rec)
    del chosen[k:]
    return FewShotSet(question_id, tuple(chosen), SKILL_BASED, tuple(skills))


def identify_missing_skills(
    question: Question,
    response: str,
    skill_list: Sequence[str],
    judge,
    *,
    retries: int = 2,
    params=None,
) -> tuple[str, list[str]]:
    """Ask the judge whether a response is correct and which skills it lacks.

    Returns ``(verdict, missing)``; a "correct" verdict always carries an
    empty missing list. Missing skills are filtered to ``skill_list`` and
    capped at five.
    """
    if not skill_list:
        raise ValidationError("skill_list must be non-empty")
    allowed = {normalize_skill_name(s) for s in skill_list}
    prompt = missing_skill_prompt(question.text, response, skill_list)
    messages = [{"role": "user", "content": prompt}]
    reply = ""
    for _ in range(retries + 1):
        reply = judge.complete(messages, params)[0]
        raw_verdict = parse_tagged_field(reply, "judge")
        if raw_verdict is None:
            continue
        verdict = raw_verdict.strip().lower().rstrip(".")
        if verdict not in (VERDICT_CORRECT, VERDICT_INCORRECT):
            continue
        if verdict == VERDICT_CORRECT:
            return VERDICT_CORRECT, []
        raw_skills = parse_tagged_field(reply, "skill") or ""
        parsed: list[str] = []
        for part in raw_skills.split(","):
            name = normalize_skill_name(part)
            if name and name not in parsed:
                parsed.append(name)
        missing = [s for s in parsed if s in allowed][:MAX_INPUT_SKILLS]
        dropped = [s for s in parsed if s not in allowed]
        if dropped:
            logger.warning(
                "question %s: judge named skills outside the list: %s",
                question.id,
                dropped,
            )
        return VERDICT_INCORRECT, missing
    raise JudgmentError(
        f"no parseable judge verdict for question {question.id!r} "
        f"after {retries + 1} attempts",
        raw_reply=reply,
    )


def adaptmi_select(
    question: Question,
    label: DifficultyLabel,
    bank: ExampleBank,
    rng: random.Random,
    k: int = 5,
) -> FewShotSet:
    """Skill-based examples for difficult questions, fixed ones otherwise."""
    if not label.is_difficult:
        return fixed_examples(bank, question.id)
    return skill_based_examples(question.skills, bank, rng, k, question.id)


def adaptmi_plus_select(
    question: Question,
    label: DifficultyLabel,
    prior_response: str,
    bank: ExampleBank,
    judge,
    rng: random.Random,
    *,
    k: int = 5,
    skill_list: Sequence[str] | None = None,
    retries: int = 2,
    params=None,
) -> FewShotSet:
    """Like adaptmi, but difficult questions target only the missing skills.

    The judge grades the prior response; a "correct" verdict or an empty
    missing set degrades to the fixed defaults. A judge failure falls back
    to plain skill-based selection over the question's own skills, flagged
    in the provenance.
    """
    if not label.is_difficult:
        return fixed_examples(bank, question.id)
    if not prior_response.strip():
        raise ValidationError(
            f"difficult question {question.id!r} needs its prior response"
        )
    if skill_list is None:
        skill_list = sorted(bank.index)
    try:
        verdict, missing = identify_missing_skills(
            question, prior_response, skill_list, judge, retries=retries, params=params
        )
    except (JudgmentError, TransportError, ProtocolError) as exc:
        logger.warning(
            "question %s: judge failed (%s); falling back to skill-based selection",
            question.id,
            exc,
        )
        chosen = skill_based_examples(question.skills, bank, rng, k, question.id)
        return replace(chosen, fallback=True)
    if verdict == VERDICT_CORRECT or not missing:
        return fixed_examples(bank, question.id)
    return skill_based_examples(missing, bank, rng, k, question.id)


def _example_block(record: ExampleRecord) -> str:
    return f"Question:\n{record.text}\n\nSolution:\n{record.solution}"


def _user_message(few_shot: FewShotSet, question: Question, prefix: str = "") -> str:
    parts: list[str] = []
    if prefix:
        parts.append(prefix)
    parts.extend(_example_block(rec) for rec in few_shot.examples)
    parts.append(question.text)
    return "\n\n".join(parts)


def build_prompt(few_shot: FewShotSet, question: Question) -> PromptSpec:
    """Assemble the chat prompt: boxed-answer system message, examples, question.

    The target question always comes last in the single user message.
    """
    user = _user_message(few_shot, question)
    return PromptSpec(
        system=SYSTEM_INSTRUCTION,
        messages=(("system", SYSTEM_INSTRUCTION), ("user", user)),
        target_question=question.text,
    )


def build_feedback_prompt(
    question: Question,
    response: str,
    incorrect_step: str,
    missing: Sequence[str],
    skill_examples: FewShotSet,
    judge,
    *,
    retries: int = 2,
    params=None,
) -> str:
    """Ask the judge for a compact hint about a flawed response.

    ``skill_examples`` travels with the call for context parity with the
    selection step but is not rendered into the prompt sections.
    """
    if not missing:
        raise ValidationError("missing skills must be non-empty")
    del skill_examples
    prompt = feedback_prompt(question.text, response, incorrect_step, list(missing))
    messages = [{"role": "user", "content": prompt}]
    reply = ""
    for _ in range(retries + 1):
        reply = judge.complete(messages, params)[0]
        hint = parse_tagged_field(reply, "hint")
        if hint is not None:
            return hint
    raise FeedbackError(
        f"no hint tag in feedback reply for question {question.id!r}",
        raw_reply=reply,
    )


def assemble_feedback_prompt(
    feedback: str, few_shot: FewShotSet, question: Question
) -> PromptSpec:
    """Prompt variant with the hint text prepended before any examples."""
    user = _user_message(few_shot, question, prefix=feedback)
    return PromptSpec(
        system=SYSTEM_INSTRUCTION,
        messages=(("system", SYSTEM_INSTRUCTION), ("user", user)),
        target_question=question.text,
    )
