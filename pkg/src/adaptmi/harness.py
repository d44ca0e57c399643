"""Experiment orchestration: two-stage runs, grading, voting, and reports.

Stage 1 infers every question with the fixed examples and labels it easy or
difficult from step rewards (or a heuristic). Stage 2 re-selects examples
per the configured strategy, re-infers, and grades. The iterative mode
repeats detection + re-selection on the difficult set only, carrying easy
results forward untouched.
"""

from __future__ import annotations

import json
import logging
import random
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backend import (
    BackendConfig,
    GenerationParams,
    HttpChatBackend,
    HttpRewardBackend,
    MockScript,
    mock_backends,
)
from .corpus import (
    ExampleBank,
    ExampleRecord,
    Question,
    SkillBank,
    build_example_bank,
    load_corpus,
    load_skill_bank,
)
from .errors import ProtocolError, TransportError, ValidationError
from .reward import (
    ClassificationReport,
    DifficultyLabel,
    StepScores,
    Thresholds,
    classification_metrics,
    consistency_heuristic,
    label_from_filter,
    length_heuristic,
    orm_filter,
    partition,
    segment_steps,
    threshold_filter,
)
from .select import (
    ADAPTMI,
    ADAPTMI_PLUS,
    FIXED,
    RANDOM,
    SKILL_BASED,
    FewShotSet,
    PromptSpec,
    SelectionStrategy,
    adaptmi_plus_select,
    adaptmi_select,
    build_prompt,
    fixed_examples,
    random_examples,
    skill_based_examples,
)

logger = logging.getLogger(__name__)

CLASSIFIERS = ("prm", "consistency", "length", "orm")

BOXED_PREFIX = "\\boxed{"


def extract_boxed_answer(response: str) -> str | None:
    """Content of the last boxed answer, scanning balanced braces.

    Nested braces are allowed; an unbalanced tail after the marker counts
    as an extraction failure and yields None.
    """
    start = response.rfind(BOXED_PREFIX)
    if start < 0:
        return None
    depth = 1
    pos = start + len(BOXED_PREFIX)
    for i in range(pos, len(response)):
        ch = response[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return response[pos:i].strip()
    return None


def normalize_answer(answer: str) -> str:
    """Canonical form used for answer comparison."""
    s = answer.strip()
    s = s.replace("\\left", "").replace("\\right", "")
    s = s.replace("\\dfrac", "\\frac")
    s = s.rstrip(".")
    while len(s) > 1 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    s = s.rstrip(".")
    return "".join(s.split())


def grade(extracted: str | None, gold: str) -> bool:
    """Exact string equality after normalization; None is never correct."""
    if extracted is None:
        return False
    return normalize_answer(extracted) == normalize_answer(gold)


def consistency_at_5(responses: Sequence[str], gold: str) -> tuple[str | None, bool]:
    """Majority-vote the boxed answers of 5 samples and grade the winner.

    Ties break to the earliest first occurrence; samples without an
    extractable answer never match each other.
    """
    if len(responses) != 5:
        raise ValidationError(f"expected 5 responses, got {len(responses)}")
    extracted = [extract_boxed_answer(r) for r in responses]
    keys: list[object] = [
        ("__unextracted__", i) if e is None else normalize_answer(e)
        for i, e in enumerate(extracted)
    ]
    counts: dict[object, int] = {}
    order: list[object] = []
    for key in keys:
        if key not in counts:
            order.append(key)
        counts[key] = counts.get(key, 0) + 1
    winner = max(order, key=lambda k: counts[k])
    majority = extracted[keys.index(winner)]
    return majority, grade(majority, gold)


def level_from_outcomes(outcomes: Sequence[bool]) -> int:
    """Difficulty level from per-sample correctness, first sample first.

    Level L (1..4) means the first correct sample sits within the first
    2**(L-1) draws; level 5 means no success within the budget.
    """
    first = next((i + 1 for i, ok in enumerate(outcomes) if ok), None)
    if first is None:
        return 5
    level = 1
    while 2 ** (level - 1) < first:
        level += 1
    return min(level, 5)


def best_of_n_outcomes(
    question: Question,
    backend,
    params: GenerationParams | None = None,
    max_n: int = 8,
) -> tuple[int, list[bool]]:
    """Sample max_n completions without examples and grade each one."""
    if params is None:
        params = GenerationParams(temperature=1.0, n_samples=max_n)
    elif params.n_samples != max_n:
        params = replace(params, n_samples=max_n)
    prompt = build_prompt(FewShotSet(question.id, (), FIXED), question)
    samples = backend.complete(prompt.to_wire(), params)
    outcomes = [grade(extract_boxed_answer(s), question.gold_answer) for s in samples]
    return level_from_outcomes(outcomes), outcomes


def best_of_n_level(
    question: Question,
    backend,
    params: GenerationParams | None = None,
    max_n: int = 8,
) -> int:
    level, _ = best_of_n_outcomes(question, backend, params, max_n)
    return level


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs, mirroring the CLI flag set."""

    strategy: SelectionStrategy = SelectionStrategy(ADAPTMI)
    thresholds: Thresholds = Thresholds()
    classifier: str = "prm"
    seed: int = 0
    iterations: int = 1
    consistency_samples: int = 5
    best_of_n_max: int = 8
    orm_tau: float = 0.9
    generation: GenerationParams = GenerationParams()
    sampling_temperature: float = 1.0
    questions_path: str | None = None
    examples_path: str | None = None
    skill_bank_path: str | None = None
    fixed_example_ids: tuple[str, ...] = ()
    chat: BackendConfig = BackendConfig()
    reward: BackendConfig = BackendConfig()
    judge: BackendConfig | None = None
    mock_script_path: str | None = None
    dump_prompts: bool = False
    retries: int = 2

    def __post_init__(self):
        if self.classifier not in CLASSIFIERS:
            raise ValidationError(f"unknown classifier {self.classifier!r}")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")

    @property
    def k(self) -> int:
        return self.strategy.k

    def to_dict(self) -> dict:
        return {
            "strategy": {
                "kind": self.strategy.kind,
                "k": self.strategy.k,
                "seed": self.strategy.seed,
            },
            "thresholds": {
                "tau1": self.thresholds.tau1,
                "tau2": self.thresholds.tau2,
            },
            "classifier": self.classifier,
            "seed": self.seed,
            "iterations": self.iterations,
            "consistency_samples": self.consistency_samples,
            "best_of_n_max": self.best_of_n_max,
            "orm_tau": self.orm_tau,
            "generation": {
                "temperature": self.generation.temperature,
                "max_tokens": self.generation.max_tokens,
                "n_samples": self.generation.n_samples,
            },
            "sampling_temperature": self.sampling_temperature,
            "datasets": {
                "questions": self.questions_path,
                "examples": self.examples_path,
                "skill_bank": self.skill_bank_path,
                "fixed_example_ids": list(self.fixed_example_ids),
            },
            "backends": {
                "chat": self.chat.to_dict(),
                "reward": self.reward.to_dict(),
                "judge": self.judge.to_dict() if self.judge else None,
            },
            "mock_script": self.mock_script_path,
            "dump_prompts": self.dump_prompts,
            "retries": self.retries,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> RunConfig:
        strategy_raw = dict(raw.get("strategy", {}))
        seed = raw.get("seed", strategy_raw.get("seed", 0))
        strategy = SelectionStrategy(
            kind=strategy_raw.get("kind", ADAPTMI),
            k=strategy_raw.get("k", 5),
            seed=seed,
        )
        thresholds_raw = raw.get("thresholds", {})
        datasets = raw.get("datasets", {})
        backends = raw.get("backends", {})
        generation_raw = raw.get("generation", {})
        judge_raw = backends.get("judge")
        return cls(
            strategy=strategy,
            thresholds=Thresholds(
                tau1=thresholds_raw.get("tau1", 0.85),
                tau2=thresholds_raw.get("tau2", 0.7),
            ),
            classifier=raw.get("classifier", "prm"),
            seed=seed,
            iterations=raw.get("iterations", 1),
            consistency_samples=raw.get("consistency_samples", 5),
            best_of_n_max=raw.get("best_of_n_max", 8),
            orm_tau=raw.get("orm_tau", 0.9),
            generation=GenerationParams(
                temperature=generation_raw.get("temperature", 0.0),
                max_tokens=generation_raw.get("max_tokens", 2048),
                n_samples=generation_raw.get("n_samples", 1),
            ),
            sampling_temperature=raw.get("sampling_temperature", 1.0),
            questions_path=datasets.get("questions"),
            examples_path=datasets.get("examples"),
            skill_bank_path=datasets.get("skill_bank"),
            fixed_example_ids=tuple(datasets.get("fixed_example_ids", ())),
            chat=BackendConfig.from_dict(backends.get("chat", {})),
            reward=BackendConfig.from_dict(backends.get("reward", {})),
            judge=BackendConfig.from_dict(judge_raw) if judge_raw else None,
            mock_script_path=raw.get("mock_script"),
            dump_prompts=raw.get("dump_prompts", False),
            retries=raw.get("retries", 2),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of one question under one strategy at one iteration."""

    question_id: str
    subject: str
    difficulty_label: str
    strategy_applied: str
    response: str
    extracted_answer: str | None
    correct: bool
    step_rewards: tuple[float, ...] | None = None
    iteration: int = 1

    def __post_init__(self):
        if self.correct and self.extracted_answer is None:
            raise ValidationError(
                f"record {self.question_id!r} is correct without an answer"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.question_id,
            "subject": self.subject,
            "difficulty_label": self.difficulty_label,
            "strategy_applied": self.strategy_applied,
            "response": self.response,
            "extracted_answer": self.extracted_answer,
            "correct": self.correct,
            "step_rewards": list(self.step_rewards)
            if self.step_rewards is not None
            else None,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> EvalRecord:
        rewards = raw.get("step_rewards")
        return cls(
            question_id=raw["id"],
            subject=raw["subject"],
            difficulty_label=raw["difficulty_label"],
            strategy_applied=raw["strategy_applied"],
            response=raw["response"],
            extracted_answer=raw.get("extracted_answer"),
            correct=raw["correct"],
            step_rewards=tuple(rewards) if rewards is not None else None,
            iteration=raw.get("iteration", 1),
        )


@dataclass
class RunReport:
    """Aggregated accuracies plus the classifier quality when truth exists."""

    overall_accuracy: float
    subject_accuracy: dict[str, float]
    subject_counts: dict[str, dict]
    label_accuracy: dict[str, float]
    label_counts: dict[str, dict]
    totals: dict
    classification: ClassificationReport | None = None
    iteration_accuracy: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "subject_accuracy": self.subject_accuracy,
            "subject_counts": self.subject_counts,
            "label_accuracy": self.label_accuracy,
            "label_counts": self.label_counts,
            "totals": self.totals,
            "classification": self.classification.to_dict()
            if self.classification
            else None,
            "iteration_accuracy": self.iteration_accuracy,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def aggregate_report(
    records: Sequence[EvalRecord],
    truth: Mapping[str, bool] | None = None,
    *,
    label_source: str = "prm",
    config_echo: dict | None = None,
    iteration_accuracy: Sequence[float] | None = None,
) -> RunReport:
    """Fold records into per-subject, per-label, and overall accuracies.

    Records whose inference never produced a response (empty string) are
    counted as errors and excluded from the accuracy denominators. ``truth``
    maps question id to fixed-prompt correctness and, when given, drives
    the classification metrics for the difficulty labels.
    """
    graded = [r for r in records if r.response != ""]
    errors = len(records) - len(graded)
    correct = sum(1 for r in graded if r.correct)
    overall = correct / len(graded) if graded else 0.0

    def bucket(key_fn) -> tuple[dict[str, float], dict[str, dict]]:
        acc: dict[str, float] = {}
        counts: dict[str, dict] = {}
        groups: dict[str, list[EvalRecord]] = {}
        for rec in graded:
            groups.setdefault(key_fn(rec), []).append(rec)
        for key in sorted(groups):
            group = groups[key]
            good = sum(1 for r in group if r.correct)
            acc[key] = good / len(group)
            counts[key] = {"total": len(group), "correct": good}
        return acc, counts

    subject_acc, subject_counts = bucket(lambda r: r.subject)
    label_acc, label_counts = bucket(lambda r: r.difficulty_label)

    classification = None
    if truth is not None:
        labels = [
            DifficultyLabel(r.question_id, r.difficulty_label, label_source)
            for r in records
            if r.question_id in truth
        ]
        if labels:
            classification = classification_metrics(labels, truth)

    return RunReport(
        overall_accuracy=overall,
        subject_accuracy=subject_acc,
        subject_counts=subject_counts,
        label_accuracy=label_acc,
        label_counts=label_counts,
        totals={
            "questions": len(records),
            "graded": len(graded),
            "correct": correct,
            "errors": errors,
        },
        classification=classification,
        iteration_accuracy=list(
            iteration_accuracy if iteration_accuracy is not None else [overall]
        ),
        config=config_echo or {},
    )


@dataclass
class Stage1Result:
    """Fixed-prompt inference outcome plus the difficulty verdict."""

    label: DifficultyLabel
    response: str
    extracted: str | None
    correct: bool
    rewards: tuple[float, ...] | None = None

    @property
    def failed(self) -> bool:
        return self.response == ""


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


class Pipeline:
    """Drives one experiment over in-memory corpora and backends."""

    def __init__(
        self,
        config: RunConfig,
        questions: Sequence[Question],
        pool: Sequence[ExampleRecord],
        bank: ExampleBank,
        chat,
        reward,
        judge=None,
        skill_bank: SkillBank | None = None,
        out_dir: str | Path | None = None,
    ):
        self.config = config
        self.questions = list(questions)
        self.pool = list(pool)
        self.bank = bank
        self.chat = chat
        self.reward = reward
        self.judge = judge if judge is not None else chat
        self.skill_bank = skill_bank
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._by_id = {q.id: q for q in self.questions}

    # ---- helpers ----------------------------------------------------

    def _rng(self, iteration: int, question_id: str) -> random.Random:
        return random.Random(f"{self.config.seed}:{iteration}:{question_id}")

    def _map(self, fn, items):
        workers = self.config.chat.max_concurrency
        if workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    def _fixed_prompt(self, question: Question) -> PromptSpec:
        return build_prompt(fixed_examples(self.bank, question.id), question)

    def _infer(self, prompt: PromptSpec) -> str:
        return self.chat.complete(prompt.to_wire(), self.config.generation)[0]

    def _judge_skill_list(self, question: Question) -> list[str]:
        if self.skill_bank is not None:
            skills = self.skill_bank.skills_for(question.subject)
            if skills:
                return list(skills)
        return sorted(self.bank.index)

    # ---- stage 1: difficulty detection ------------------------------

    def _classify(self, question: Question, response: str) -> Stage1Result:
        extracted = extract_boxed_answer(response) if response else None
        correct = grade(extracted, question.gold_answer)
        cfg = self.config
        source = cfg.classifier
        if not response.strip():
            label = DifficultyLabel(question.id, "difficult", source)
            return Stage1Result(label, response, extracted, correct)
        rewards: tuple[float, ...] | None = None
        try:
            if source == "prm":
                steps = segment_steps(response)
                scores = StepScores(question.id, tuple(self.reward.score(question.text, steps)))
                rewards = scores.rewards
                bit = threshold_filter(scores, cfg.thresholds)
                label = label_from_filter(question.id, bit, source)
            elif source == "orm":
                steps = segment_steps(response)
                scored = self.reward.score(question.text, steps)
                rewards = tuple(scored)
                bit = orm_filter(scored[-1], cfg.orm_tau)
                label = label_from_filter(question.id, bit, source)
            elif source == "length":
                label = DifficultyLabel(
                    question.id, length_heuristic([response]), source
                )
            else:  # consistency
                params = GenerationParams(
                    temperature=cfg.sampling_temperature,
                    max_tokens=cfg.generation.max_tokens,
                    n_samples=cfg.consistency_samples,
                )
                samples = self.chat.complete(
                    self._fixed_prompt(question).to_wire(), params
                )
                answers = [
                    None if (a := extract_boxed_answer(s)) is None
                    else normalize_answer(a)
                    for s in samples
                ]
                label = DifficultyLabel(
                    question.id, consistency_heuristic(answers), source
                )
        except (TransportError, ProtocolError) as exc:
            logger.warning(
                "classification failed for %s (%s); labeling difficult",
                question.id,
                exc,
            )
            label = DifficultyLabel(question.id, "difficult", source)
        return Stage1Result(label, response, extracted, correct, rewards)

    def stage1(
        self, reuse: Mapping[str, Stage1Result] | None = None
    ) -> dict[str, Stage1Result]:
        """Fixed-prompt inference and difficulty labeling for every question."""

        def one(question: Question) -> Stage1Result:
            if reuse and question.id in reuse:
                return reuse[question.id]
            try:
                response = self._infer(self._fixed_prompt(question))
            except (TransportError, ProtocolError) as exc:
                logger.warning("stage-1 inference failed for %s: %s", question.id, exc)
                response = ""
            return self._classify(question, response)

        results = self._map(one, self.questions)
        return {q.id: res for q, res in zip(self.questions, results)}

    def redetect(self, responses: Mapping[str, str]) -> dict[str, Stage1Result]:
        """Re-run difficulty detection over existing responses."""

        def one(question: Question) -> Stage1Result:
            return self._classify(question, responses.get(question.id, ""))

        results = self._map(one, self.questions)
        return {q.id: res for q, res in zip(self.questions, results)}

    # ---- stage 2: selection + inference ------------------------------

    def select_for(
        self,
        question: Question,
        label: DifficultyLabel,
        prior_response: str,
        iteration: int,
    ) -> FewShotSet:
        cfg = self.config
        kind = cfg.strategy.kind
        rng = self._rng(iteration, question.id)
        k = cfg.strategy.k
        if kind == FIXED:
            return fixed_examples(self.bank, question.id)
        if kind == RANDOM:
            return random_examples(self.pool, k, rng, question.id)
        if kind == SKILL_BASED:
            return skill_based_examples(question.skills, self.bank, rng, k, question.id)
        if kind == ADAPTMI:
            return adaptmi_select(question, label, self.bank, rng, k)
        if label.is_difficult and not prior_response.strip():
            # nothing for the judge to grade; degrade like a judge failure
            chosen = adaptmi_select(question, label, self.bank, rng, k)
            return replace(chosen, fallback=True)
        return adaptmi_plus_select(
            question,
            label,
            prior_response,
            self.bank,
            self.judge,
            rng,
            k=k,
            skill_list=self._judge_skill_list(question),
            retries=cfg.retries,
        )

    def stage2(
        self,
        stage1: Mapping[str, Stage1Result],
        iteration: int = 1,
        only: set[str] | None = None,
        prior_responses: Mapping[str, str] | None = None,
        labels: Mapping[str, DifficultyLabel] | None = None,
    ) -> tuple[list[EvalRecord], list[dict], list[dict]]:
        """Select, infer, and grade; returns (records, selections, prompts)."""
        targets = [
            q for q in self.questions if only is None or q.id in only
        ]

        def one(question: Question):
            s1 = stage1[question.id]
            label = labels[question.id] if labels else s1.label
            prior = (
                prior_responses[question.id]
                if prior_responses is not None
                else s1.response
            )
            few_shot = self.select_for(question, label, prior, iteration)
            prompt = build_prompt(few_shot, question)
            try:
                response = self._infer(prompt)
            except (TransportError, ProtocolError) as exc:
                logger.warning(
                    "stage-2 inference failed for %s: %s", question.id, exc
                )
                response = ""
            extracted = extract_boxed_answer(response) if response else None
            record = EvalRecord(
                question_id=question.id,
                subject=question.subject,
                difficulty_label=label.label,
                strategy_applied=few_shot.strategy,
                response=response,
                extracted_answer=extracted,
                correct=grade(extracted, question.gold_answer),
                step_rewards=s1.rewards,
                iteration=iteration,
            )
            selection = {
                "id": question.id,
                "strategy": few_shot.strategy,
                "example_ids": few_shot.example_ids(),
                "skills_used": list(few_shot.skills_used),
                "fallback": few_shot.fallback,
            }
            prompt_row = {
                "id": question.id,
                "iteration": iteration,
                "system": prompt.system,
                "messages": prompt.to_wire(),
            }
            return record, selection, prompt_row

        rows = self._map(one, targets)
        records = [r for r, _, _ in rows]
        selections = [s for _, s, _ in rows]
        prompts = [p for _, _, p in rows] if self.config.dump_prompts else []
        return records, selections, prompts

    # ---- full runs ----------------------------------------------------

    def _label_rows(self, stage1: Mapping[str, Stage1Result]) -> list[dict]:
        rows = []
        for q in self.questions:
            res = stage1[q.id]
            row = {
                "id": q.id,
                "label": res.label.label,
                "source": res.label.source,
            }
            if res.rewards is not None:
                row["rewards"] = list(res.rewards)
            rows.append(row)
        return rows

    def _stage1_rows(self, stage1: Mapping[str, Stage1Result]) -> list[dict]:
        return [
            {
                "id": q.id,
                "response": stage1[q.id].response,
                "extracted_answer": stage1[q.id].extracted,
                "correct": stage1[q.id].correct,
            }
            for q in self.questions
        ]

    def _load_stage1(self) -> dict[str, Stage1Result]:
        if self.out_dir is None:
            return {}
        labels_path = self.out_dir / "labels.jsonl"
        stage1_path = self.out_dir / "stage1.jsonl"
        if not labels_path.exists() or not stage1_path.exists():
            return {}
        labels = {row["id"]: row for row in _read_jsonl(labels_path)}
        reuse: dict[str, Stage1Result] = {}
        for row in _read_jsonl(stage1_path):
            qid = row["id"]
            if qid not in labels or qid not in self._by_id:
                continue
            lrow = labels[qid]
            rewards = lrow.get("rewards")
            reuse[qid] = Stage1Result(
                label=DifficultyLabel(qid, lrow["label"], lrow["source"]),
                response=row["response"],
                extracted=row.get("extracted_answer"),
                correct=row["correct"],
                rewards=tuple(rewards) if rewards is not None else None,
            )
        return reuse

    def _load_records(self, name: str = "records.jsonl") -> dict[str, EvalRecord]:
        if self.out_dir is None:
            return {}
        path = self.out_dir / name
        if not path.exists():
            return {}
        loaded = {}
        for row in _read_jsonl(path):
            if row["id"] in self._by_id:
                loaded[row["id"]] = EvalRecord.from_dict(row)
        return loaded

    def _load_selections(self, name: str = "selection.jsonl") -> dict[str, dict]:
        if self.out_dir is None:
            return {}
        path = self.out_dir / name
        if not path.exists():
            return {}
        return {row["id"]: row for row in _read_jsonl(path)}

    def _write_traces(
        self,
        stage1: Mapping[str, Stage1Result],
        records: Sequence[EvalRecord],
        selections: Sequence[dict],
        prompts: Sequence[dict],
        report: RunReport,
        suffix: str = "",
    ) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.json").write_text(
            json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        _write_jsonl(self.out_dir / f"labels{suffix}.jsonl", self._label_rows(stage1))
        _write_jsonl(self.out_dir / f"stage1{suffix}.jsonl", self._stage1_rows(stage1))
        _write_jsonl(
            self.out_dir / f"selection{suffix}.jsonl", list(selections)
        )
        _write_jsonl(
            self.out_dir / f"records{suffix}.jsonl",
            [r.to_dict() for r in records],
        )
        if prompts:
            _write_jsonl(self.out_dir / f"prompts{suffix}.jsonl", list(prompts))
        (self.out_dir / f"report{suffix}.json").write_text(
            report.to_json() + "\n", encoding="utf-8"
        )

    def run(self, *, resume: bool = False) -> RunReport:
        """One full two-stage pass over the corpus."""
        stage1 = self.stage1(reuse=self._load_stage1() if resume else None)
        partition([res.label for res in stage1.values()])  # one label per id
        existing = self._load_records() if resume else {}
        existing_selection = self._load_selections() if resume else {}
        todo = {q.id for q in self.questions if q.id not in existing}
        new_records, new_selections, prompts = self.stage2(
            stage1, iteration=1, only=todo if resume else None
        )
        new_by_id = {r.question_id: r for r in new_records}
        sel_by_id = {s["id"]: s for s in new_selections}
        records = []
        selections = []
        for q in self.questions:
            if q.id in new_by_id:
                records.append(new_by_id[q.id])
                selections.append(sel_by_id[q.id])
            else:
                records.append(existing[q.id])
                if q.id in existing_selection:
                    selections.append(existing_selection[q.id])
        truth = {qid: res.correct for qid, res in stage1.items()}
        report = aggregate_report(
            records,
            truth,
            label_source=self.config.classifier,
            config_echo=self.config.to_dict(),
        )
        self._write_traces(stage1, records, selections, prompts, report)
        return report

    def run_iterative(self, iterations: int | None = None) -> list[RunReport]:
        """Repeat detection + re-selection, re-inferring only difficult questions."""
        total = iterations if iterations is not None else self.config.iterations
        if total < 1:
            raise ValidationError("iterations must be >= 1")
        reports: list[RunReport] = []
        accuracy_path: list[float] = []
        current: dict[str, EvalRecord] = {}
        stage1 = self.stage1()
        detection = stage1
        for iteration in range(1, total + 1):
            if iteration == 1:
                new_records, selections, prompts = self.stage2(stage1, iteration=1)
                for rec in new_records:
                    current[rec.question_id] = rec
            else:
                responses = {qid: rec.response for qid, rec in current.items()}
                detection = self.redetect(responses)
                _, difficult_ids = partition(
                    [detection[q.id].label for q in self.questions]
                )
                difficult = set(difficult_ids)
                prior = {
                    qid: detection[qid].response for qid in difficult
                }
                new_records, selections, prompts = self.stage2(
                    detection,
                    iteration=iteration,
                    only=difficult,
                    prior_responses=prior,
                )
                for rec in new_records:
                    current[rec.question_id] = rec
            ordered = [current[q.id] for q in self.questions]
            truth = {qid: res.correct for qid, res in detection.items()}
            correct = sum(1 for r in ordered if r.response != "" and r.correct)
            graded = sum(1 for r in ordered if r.response != "")
            accuracy_path.append(correct / graded if graded else 0.0)
            report = aggregate_report(
                ordered,
                truth,
                label_source=self.config.classifier,
                config_echo=self.config.to_dict(),
                iteration_accuracy=accuracy_path,
            )
            reports.append(report)
            suffix = f"_iter{iteration}"
            self._write_traces(
                detection, ordered, selections, prompts, report, suffix=suffix
            )
        if self.out_dir is not None:
            final = reports[-1]
            ordered = [current[q.id] for q in self.questions]
            _write_jsonl(
                self.out_dir / "records.jsonl", [r.to_dict() for r in ordered]
            )
            (self.out_dir / "report.json").write_text(
                final.to_json() + "\n", encoding="utf-8"
            )
        return reports


def load_inputs(
    config: RunConfig,
) -> tuple[list[Question], list[ExampleRecord], ExampleBank, SkillBank | None]:
    """Load the corpora and banks named in the config."""
    if not config.questions_path or not config.examples_path:
        raise ValidationError("config must name questions and examples paths")
    questions = load_corpus(config.questions_path, "questions")
    pool = load_corpus(config.examples_path, "examples")
    bank = build_example_bank(pool, config.fixed_example_ids)
    skill_bank = (
        load_skill_bank(config.skill_bank_path) if config.skill_bank_path else None
    )
    return questions, pool, bank, skill_bank


def build_backends(config: RunConfig) -> tuple[object, object, object]:
    """Chat, reward, and judge backends; scripted mocks in mock mode."""
    if config.mock_script_path:
        script = MockScript.from_file(config.mock_script_path)
        chat, reward = mock_backends(script)
        return chat, reward, chat
    chat = HttpChatBackend(config.chat)
    reward = HttpRewardBackend(config.reward)
    judge = HttpChatBackend(config.judge) if config.judge else chat
    return chat, reward, judge


def run_pipeline(
    config: RunConfig,
    out_dir: str | Path | None = None,
    *,
    resume: bool = False,
) -> RunReport:
    """Load inputs per config, run the two-stage pipeline, emit traces."""
    questions, pool, bank, skill_bank = load_inputs(config)
    chat, reward, judge = build_backends(config)
    pipeline = Pipeline(
        config, questions, pool, bank, chat, reward, judge, skill_bank, out_dir
    )
    return pipeline.run(resume=resume)


def run_iterative(
    config: RunConfig,
    iterations: int | None = None,
    out_dir: str | Path | None = None,
) -> list[RunReport]:
    """Iterative variant; returns one report per iteration."""
    questions, pool, bank, skill_bank = load_inputs(config)
    chat, reward, judge = build_backends(config)
    pipeline = Pipeline(
        config, questions, pool, bank, chat, reward, judge, skill_bank, out_dir
    )
    return pipeline.run_iterative(iterations)
