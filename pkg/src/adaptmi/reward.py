"""Difficulty detection from step rewards, heuristics, and classifier scoring.

A response is split into steps, each step carries a reward in [0, 1], and a
threshold filter decides whether the question counts as easy (1) or
difficult (0). All comparisons are inclusive; a threshold of exactly 0
disables its clause entirely.
"""

from __future__ import annotations

import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .errors import ValidationError

EASY = "easy"
DIFFICULT = "difficult"
LABELS = (EASY, DIFFICULT)
LABEL_SOURCES = ("prm", "consistency", "length", "orm", "oracle")

LENGTH_WORD_LIMIT = 800
CONSISTENCY_SAMPLE_COUNT = 5
ORM_DEFAULT_TAU = 0.9

_BLANK_LINES = re.compile(r"\n{2,}")


@dataclass(frozen=True)
class StepScores:
    """Per-step rewards for one model response."""

    question_id: str
    rewards: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.rewards) < 1:
            raise ValidationError(
                f"step scores for {self.question_id!r} need at least one step"
            )
        for r in self.rewards:
            if not 0.0 <= r <= 1.0:
                raise ValidationError(
                    f"reward {r} for {self.question_id!r} outside [0, 1]"
                )

    @property
    def t(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class Thresholds:
    """Filter thresholds; 0 disables the corresponding constraint."""

    tau1: float = 0.85
    tau2: float = 0.7

    def __post_init__(self):
        for name, value in (("tau1", self.tau1), ("tau2", self.tau2)):
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True)
class DifficultyLabel:
    """Easy/difficult verdict for one question, with its provenance."""

    question_id: str
    label: str
    source: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}")
        if self.source not in LABEL_SOURCES:
            raise ValidationError(f"unknown label source {self.source!r}")

    @property
    def is_difficult(self) -> bool:
        return self.label == DIFFICULT


@dataclass(frozen=True)
class ClassificationReport:
    """Confusion counts and derived metrics; positive class is "difficult"."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def segment_steps(response: str) -> list[str]:
    """Split a response into steps on blank lines.

    A step boundary is two or more consecutive newlines; empty segments are
    dropped. A response with no blank line is a single step.
    """
    if not response.strip():
        raise ValidationError("response is empty or whitespace-only")
    segments = [seg.strip() for seg in _BLANK_LINES.split(response)]
    return [seg for seg in segments if seg]


def threshold_filter(scores: StepScores, th: Thresholds) -> int:
    """Return 0 (difficult) when any enabled low-reward condition fires, else 1.

    Conditions: final step reward <= tau1, mean reward <= tau1, or any
    non-final step reward <= tau2. With one step the non-final clause is
    vacuously false.
    """
    r = scores.rewards
    t = len(r)
    final_low = th.tau1 > 0 and r[-1] <= th.tau1
    mean_low = th.tau1 > 0 and sum(r) / t <= th.tau1
    early_low = th.tau2 > 0 and any(r[i] <= th.tau2 for i in range(t - 1))
    return 0 if (final_low or mean_low or early_low) else 1


def label_from_filter(question_id: str, bit: int, source: str) -> DifficultyLabel:
    """Wrap a 0/1 filter outcome into a label (0 means difficult)."""
    return DifficultyLabel(question_id, DIFFICULT if bit == 0 else EASY, source)


def partition(labels: Sequence[DifficultyLabel]) -> tuple[list[str], list[str]]:
    """Split labelled ids into (easy, difficult), preserving input order."""
    seen: set[str] = set()
    easy: list[str] = []
    difficult: list[str] = []
    for label in labels:
        if label.question_id in seen:
            raise ValidationError(f"duplicate question id {label.question_id!r}")
        seen.add(label.question_id)
        (difficult if label.is_difficult else easy).append(label.question_id)
    return easy, difficult


def consistency_heuristic(answers: Sequence[str | None]) -> str:
    """Difficult when the modal answer among 5 samples appears fewer than twice.

    ``None`` marks an unextractable answer; such entries never match each
    other (or anything else).
    """
    if len(answers) != CONSISTENCY_SAMPLE_COUNT:
        raise ValidationError(
            f"expected {CONSISTENCY_SAMPLE_COUNT} answers, got {len(answers)}"
        )
    counts: dict[object, int] = {}
    for i, answer in enumerate(answers):
        key = ("__unextracted__", i) if answer is None else answer
        counts[key] = counts.get(key, 0) + 1
    return DIFFICULT if max(counts.values()) < 2 else EASY


def length_heuristic(responses: Sequence[str]) -> str:
    """Difficult when the mean whitespace-delimited word count is >= 800."""
    if not responses:
        raise ValidationError("length heuristic needs at least one response")
    mean_words = sum(len(r.split()) for r in responses) / len(responses)
    return DIFFICULT if mean_words >= LENGTH_WORD_LIMIT else EASY


def orm_filter(final_reward: float, tau: float = ORM_DEFAULT_TAU) -> int:
    """Outcome-reward variant: 0 (difficult) iff the final reward is <= tau."""
    if not 0.0 <= final_reward <= 1.0:
        raise ValidationError(f"final reward {final_reward} outside [0, 1]")
    return 0 if final_reward <= tau else 1


def classification_metrics(
    predicted: Sequence[DifficultyLabel], truth: Mapping[str, bool]
) -> ClassificationReport:
    """Score difficulty predictions against response correctness.

    ``truth`` maps question id to whether the response was correct; the
    positive class is "difficult" (i.e. response-incorrect).
    """
    tp = fp = tn = fn = 0
    seen: set[str] = set()
    for label in predicted:
        qid = label.question_id
        if qid in seen:
            raise ValidationError(f"duplicate prediction for {qid!r}")
        seen.add(qid)
        if qid not in truth:
            raise ValidationError(f"question {qid!r} missing from truth")
        actually_difficult = not truth[qid]
        if label.is_difficult:
            tp, fp = (tp + 1, fp) if actually_difficult else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if actually_difficult else (fn, tn + 1)
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    accuracy = (tp + tn) / total if total > 0 else 0.0
    return ClassificationReport(accuracy, precision, recall, f1, tp, fp, tn, fn)
