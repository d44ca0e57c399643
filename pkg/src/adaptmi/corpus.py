"""Question/example corpora, skill banks, and the skill-to-example index.

Corpora are line-delimited JSON. Records are immutable once loaded;
annotation produces new records (and, at the CLI level, a new file) instead
of mutating anything in place.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AnnotationError, ParseError, ValidationError
from .prompts import annotation_prompt

logger = logging.getLogger(__name__)

MAX_SKILLS = 5
BOXED_MARKER = "\\boxed{"

_WS_RUN = re.compile(r"\s+")


def normalize_skill_name(name: str) -> str:
    """Lowercase, trim, and join internal whitespace runs with underscores."""
    return _WS_RUN.sub("_", name.strip()).lower()


def _normalized_skills(skills: Iterable[str]) -> tuple[str, ...]:
    return tuple(normalize_skill_name(s) for s in skills)


@dataclass(frozen=True)
class Question:
    """One benchmark item: problem text, gold answer, and annotated skills."""

    id: str
    subject: str
    text: str
    gold_answer: str
    skills: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "skills", _normalized_skills(self.skills))
        if len(self.skills) > MAX_SKILLS:
            raise ValidationError(
                f"question {self.id!r} carries {len(self.skills)} skills; "
                f"at most {MAX_SKILLS} allowed"
            )


@dataclass(frozen=True)
class ExampleRecord:
    """A worked question/solution pair usable as an in-context example."""

    id: str
    subject: str
    text: str
    solution: str
    skills: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "skills", _normalized_skills(self.skills))
        if len(self.skills) > MAX_SKILLS:
            raise ValidationError(
                f"example {self.id!r} carries {len(self.skills)} skills; "
                f"at most {MAX_SKILLS} allowed"
            )
        if not self.solution.strip():
            raise ValidationError(f"example {self.id!r} has an empty solution")
        if self.solution.count(BOXED_MARKER) != 1:
            raise ValidationError(
                f"example {self.id!r} must contain exactly one boxed answer"
            )


@dataclass(frozen=True)
class SkillBank:
    """Per-subject lists of admissible skill names."""

    subjects: Mapping[str, tuple[str, ...]]

    def skills_for(self, subject: str) -> tuple[str, ...]:
        return self.subjects.get(subject, ())

    def check_covers(self, records: Iterable[Question | ExampleRecord]) -> None:
        """Raise unless every record skill is listed for its subject."""
        for rec in records:
            allowed = set(self.skills_for(rec.subject))
            unknown = [s for s in rec.skills if s not in allowed]
            if unknown:
                raise ValidationError(
                    f"record {rec.id!r} uses skills {unknown} missing from "
                    f"the {rec.subject!r} skill list"
                )

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Sequence[str]]) -> SkillBank:
        return cls(
            {subject: _normalized_skills(names) for subject, names in raw.items()}
        )


@dataclass(frozen=True)
class ExampleBank:
    """Inverse index from skill name to candidate examples, plus the fixed set."""

    index: Mapping[str, tuple[ExampleRecord, ...]]
    fixed_defaults: tuple[ExampleRecord, ...] = ()

    def candidates(self, skill: str) -> tuple[ExampleRecord, ...]:
        return self.index.get(skill, ())


def build_example_bank(
    pool: Sequence[ExampleRecord], fixed_ids: Sequence[str] = ()
) -> ExampleBank:
    """Index a pool by skill and resolve the fixed default examples.

    Each skill maps to exactly the records carrying it, in pool order;
    ``fixed_ids`` must all resolve to pool records.
    """
    index: dict[str, list[ExampleRecord]] = {}
    by_id: dict[str, ExampleRecord] = {}
    for rec in pool:
        by_id[rec.id] = rec
        for skill in rec.skills:
            index.setdefault(skill, []).append(rec)
    defaults = []
    for fid in fixed_ids:
        if fid not in by_id:
            raise ValidationError(f"fixed example id {fid!r} not found in pool")
        defaults.append(by_id[fid])
    if len({r.id for r in defaults}) != len(defaults):
        raise ValidationError("fixed example ids must be distinct")
    return ExampleBank(
        index={skill: tuple(recs) for skill, recs in index.items()},
        fixed_defaults=tuple(defaults),
    )


_REQUIRED_FIELDS = {
    "questions": ("id", "subject", "question", "answer"),
    "examples": ("id", "subject", "question", "answer", "solution"),
}


def _record_from_obj(obj: dict, kind: str) -> Question | ExampleRecord:
    skills = obj.get("skills", [])
    if kind == "questions":
        return Question(
            id=obj["id"],
            subject=obj["subject"],
            text=obj["question"],
            gold_answer=obj["answer"],
            skills=tuple(skills),
        )
    return ExampleRecord(
        id=obj["id"],
        subject=obj["subject"],
        text=obj["question"],
        solution=obj["solution"],
        skills=tuple(skills),
    )


def load_corpus(path: str | Path, kind: str) -> list[Question] | list[ExampleRecord]:
    """Load a JSONL corpus of questions or in-context examples.

    Skill names are normalized on load; malformed lines and duplicate ids
    are rejected with the offending line number / id.
    """
    if kind not in _REQUIRED_FIELDS:
        raise ValidationError(f"unknown corpus kind {kind!r}")
    path = Path(path)
    records: list = []
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            missing = [f for f in _REQUIRED_FIELDS[kind] if f not in obj]
            if missing:
                raise ParseError(f"{path}:{lineno}: missing fields {missing}")
            record = _record_from_obj(obj, kind)
            if record.id in seen_ids:
                raise ValidationError(f"{path}:{lineno}: duplicate id {record.id!r}")
            seen_ids.add(record.id)
            records.append(record)
    return records


def load_skill_bank(path: str | Path) -> SkillBank:
    """Load a subject-to-skill-list mapping from a JSON file."""
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: skill bank must be a JSON object")
    return SkillBank.from_mapping(raw)


_TAG_CACHE: dict[str, re.Pattern] = {}


def parse_tagged_field(text: str, tag: str) -> str | None:
    """Return the trimmed content of the first ``<tag>...</tag>`` pair.

    Spaces inside the angle brackets are tolerated. Returns None when the
    tag is absent; callers decide whether that is an error.
    """
    pattern = _TAG_CACHE.get(tag)
    if pattern is None:
        esc = re.escape(tag)
        pattern = re.compile(
            rf"<\s*{esc}\s*>(.*?)<\s*/\s*{esc}\s*>", re.DOTALL | re.IGNORECASE
        )
        _TAG_CACHE[tag] = pattern
    match = pattern.search(text)
    if match is None:
        return None
    return match.group(1).strip()


def _parse_skill_csv(raw: str) -> list[str]:
    seen: set[str] = set()
    skills = []
    for part in raw.split(","):
        name = normalize_skill_name(part)
        if name and name not in seen:
            seen.add(name)
            skills.append(name)
    return skills


def annotate_skills(
    question: Question,
    skill_list: Sequence[str],
    llm,
    *,
    retries: int = 2,
    params=None,
) -> list[str]:
    """Ask the chat backend which skills a question requires.

    Returns 1..5 normalized skill names, all members of ``skill_list``.
    Skills outside the list are dropped with a warning; if nothing usable
    remains after the configured retries the raw reply is surfaced.
    """
    if not skill_list:
        raise ValidationError("skill_list must be non-empty")
    allowed = set(_normalized_skills(skill_list))
    prompt = annotation_prompt(question.text, skill_list)
    messages = [{"role": "user", "content": prompt}]
    reply = ""
    for _ in range(retries + 1):
        reply = llm.complete(messages, params)[0]
        raw = parse_tagged_field(reply, "skill")
        if raw is None:
            continue
        skills = _parse_skill_csv(raw)[:MAX_SKILLS]
        kept = [s for s in skills if s in allowed]
        dropped = [s for s in skills if s not in allowed]
        if dropped:
            logger.warning(
                "question %s: dropped skills outside the list: %s",
                question.id,
                dropped,
            )
        if kept:
            return kept
    raise AnnotationError(
        f"no usable skill tag for question {question.id!r} "
        f"after {retries + 1} attempts",
        raw_reply=reply,
    )


def annotate_corpus(
    questions: Sequence[Question],
    skill_bank: SkillBank,
    llm,
    *,
    retries: int = 2,
    max_workers: int = 1,
    params=None,
) -> list[Question]:
    """Annotate every question, returning new records in input order."""

    def one(question: Question) -> Question:
        skills = annotate_skills(
            question,
            skill_bank.skills_for(question.subject),
            llm,
            retries=retries,
            params=params,
        )
        return Question(
            id=question.id,
            subject=question.subject,
            text=question.text,
            gold_answer=question.gold_answer,
            skills=tuple(skills),
        )

    if max_workers <= 1:
        return [one(q) for q in questions]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, questions))


def annotate_corpus_file(
    in_path: str | Path,
    out_path: str | Path,
    skill_bank: SkillBank,
    llm,
    *,
    retries: int = 2,
    max_workers: int = 1,
    params=None,
) -> int:
    """Annotate a question JSONL file into a new file.

    Input field order is preserved and "skills" is appended (or replaced in
    place when already present). Returns the number of questions written.
    """
    questions = load_corpus(in_path, "questions")
    annotated = annotate_corpus(
        questions,
        skill_bank,
        llm,
        retries=retries,
        max_workers=max_workers,
        params=params,
    )
    skills_by_id = {q.id: list(q.skills) for q in annotated}
    out_path = Path(out_path)
    count = 0
    with Path(in_path).open(encoding="utf-8") as src, out_path.open(
        "w", encoding="utf-8"
    ) as dst:
        for line in src:
            if not line.strip():
                continue
            obj = json.loads(line)
            obj["skills"] = skills_by_id[obj["id"]]
            dst.write(json.dumps(obj, ensure_ascii=False) + "\n")
            count += 1
    return count
