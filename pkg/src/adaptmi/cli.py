"""Command-line entry point.

Subcommands: annotate, classify, select, run, iterate, level, metrics,
report. Flags override config-file values; every artifact lands in the
--out directory. With --mock the whole pipeline runs offline against a
scripted backend.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .backend import GenerationParams
from .corpus import load_corpus, load_skill_bank, annotate_corpus_file
from .errors import AdaptMIError, ParseError, ValidationError
from .harness import (
    Pipeline,
    RunConfig,
    best_of_n_outcomes,
    build_backends,
    load_inputs,
    run_iterative,
    run_pipeline,
)
from .reward import DifficultyLabel, classification_metrics
from .select import SelectionStrategy, build_prompt

_STRATEGY_ALIASES = {
    "fixed": "fixed",
    "random": "random",
    "skill": "skill_based",
    "skill_based": "skill_based",
    "adaptmi": "adaptmi",
    "adaptmi+": "adaptmi_plus",
    "adaptmi_plus": "adaptmi_plus",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--mock", help="mock backend script (offline mode)")
    parser.add_argument("--strategy", choices=sorted(_STRATEGY_ALIASES))
    parser.add_argument("--classifier", choices=["prm", "consistency", "length", "orm"])
    parser.add_argument("--tau1", type=float)
    parser.add_argument("--tau2", type=float)
    parser.add_argument("--k", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--resume", action="store_true")
    parser.add_argument("--dump-prompts", action="store_true")
    parser.add_argument("--questions", help="question corpus JSONL")
    parser.add_argument("--examples", help="example pool JSONL")
    parser.add_argument("--skill-bank", help="skill bank JSON")
    parser.add_argument("--fixed-ids", help="comma-separated fixed example ids")


def _effective_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    strategy = config.strategy
    kind = strategy.kind
    if args.strategy:
        kind = _STRATEGY_ALIASES[args.strategy]
    k = args.k if args.k is not None else strategy.k
    seed = args.seed if args.seed is not None else config.seed
    thresholds = config.thresholds
    if args.tau1 is not None or args.tau2 is not None:
        thresholds = replace(
            thresholds,
            tau1=args.tau1 if args.tau1 is not None else thresholds.tau1,
            tau2=args.tau2 if args.tau2 is not None else thresholds.tau2,
        )
    updates: dict = {
        "strategy": SelectionStrategy(kind, k, seed),
        "thresholds": thresholds,
        "seed": seed,
    }
    if args.classifier:
        updates["classifier"] = args.classifier
    if args.iterations is not None:
        updates["iterations"] = args.iterations
    if args.mock:
        updates["mock_script_path"] = args.mock
    if args.dump_prompts:
        updates["dump_prompts"] = True
    if args.questions:
        updates["questions_path"] = args.questions
    if args.examples:
        updates["examples_path"] = args.examples
    if args.skill_bank:
        updates["skill_bank_path"] = args.skill_bank
    if args.fixed_ids:
        updates["fixed_example_ids"] = tuple(
            part.strip() for part in args.fixed_ids.split(",") if part.strip()
        )
    return replace(config, **updates)


def _out_dir(args: argparse.Namespace) -> Path:
    if not args.out:
        raise ValidationError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
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


def _cmd_annotate(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    if not config.questions_path:
        raise ValidationError("annotate needs --questions")
    if not config.skill_bank_path:
        raise ValidationError("annotate needs --skill-bank")
    out = _out_dir(args)
    skill_bank = load_skill_bank(config.skill_bank_path)
    _, _, judge = build_backends(config)
    count = annotate_corpus_file(
        config.questions_path,
        out / "annotated.jsonl",
        skill_bank,
        judge,
        retries=config.retries,
        max_workers=config.chat.max_concurrency,
    )
    print(f"annotated {count} questions -> {out / 'annotated.jsonl'}")
    return 0


def _build_pipeline(config: RunConfig, out_dir: Path | None) -> Pipeline:
    questions, pool, bank, skill_bank = load_inputs(config)
    chat, reward, judge = build_backends(config)
    return Pipeline(
        config, questions, pool, bank, chat, reward, judge, skill_bank, out_dir
    )


def _cmd_classify(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    out = _out_dir(args)
    pipeline = _build_pipeline(config, out)
    stage1 = pipeline.stage1()
    _write_jsonl(out / "labels.jsonl", pipeline._label_rows(stage1))
    _write_jsonl(out / "stage1.jsonl", pipeline._stage1_rows(stage1))
    _write_json(out / "config.json", config.to_dict())
    difficult = sum(1 for res in stage1.values() if res.label.is_difficult)
    print(f"labeled {len(stage1)} questions ({difficult} difficult) -> {out}")
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    out = _out_dir(args)
    if not args.labels:
        raise ValidationError("select needs --labels")
    pipeline = _build_pipeline(config, out)
    label_rows = {row["id"]: row for row in _read_jsonl(Path(args.labels))}
    responses: dict[str, str] = {}
    if args.responses:
        responses = {
            row["id"]: row.get("response", "")
            for row in _read_jsonl(Path(args.responses))
        }
    selections = []
    prompts = []
    for question in pipeline.questions:
        row = label_rows.get(question.id)
        if row is None:
            raise ValidationError(f"no label for question {question.id!r}")
        label = DifficultyLabel(question.id, row["label"], row["source"])
        few_shot = pipeline.select_for(
            question, label, responses.get(question.id, ""), iteration=1
        )
        selections.append(
            {
                "id": question.id,
                "strategy": few_shot.strategy,
                "example_ids": few_shot.example_ids(),
                "skills_used": list(few_shot.skills_used),
                "fallback": few_shot.fallback,
            }
        )
        if config.dump_prompts:
            prompt = build_prompt(few_shot, question)
            prompts.append(
                {
                    "id": question.id,
                    "iteration": 1,
                    "system": prompt.system,
                    "messages": prompt.to_wire(),
                }
            )
    _write_jsonl(out / "selection.jsonl", selections)
    if prompts:
        _write_jsonl(out / "prompts.jsonl", prompts)
    print(f"selected examples for {len(selections)} questions -> {out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    out = _out_dir(args)
    report = run_pipeline(config, out, resume=args.resume)
    print(f"overall accuracy {report.overall_accuracy:.4f} -> {out / 'report.json'}")
    return 0


def _cmd_iterate(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    out = _out_dir(args)
    reports = run_iterative(config, config.iterations, out)
    path = " -> ".join(f"{r.overall_accuracy:.4f}" for r in reports)
    print(f"iteration accuracies: {path} -> {out / 'report.json'}")
    return 0


def _cmd_level(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    out = _out_dir(args)
    if not config.questions_path:
        raise ValidationError("level needs --questions")
    questions = load_corpus(config.questions_path, "questions")
    chat, _, _ = build_backends(config)
    params = GenerationParams(
        temperature=config.sampling_temperature,
        max_tokens=config.generation.max_tokens,
        n_samples=config.best_of_n_max,
    )
    rows = []
    for question in questions:
        level, outcomes = best_of_n_outcomes(
            question, chat, params, config.best_of_n_max
        )
        rows.append({"id": question.id, "level": level, "outcomes": outcomes})
    _write_jsonl(out / "levels.jsonl", rows)
    _write_json(
        out / "levels_meta.json",
        {
            "method": "single_batch_first_success",
            "samples": config.best_of_n_max,
            "temperature": config.sampling_temperature,
            "note": (
                "all samples come from one batch; nested prefixes of the "
                "sample sequence realize each smaller budget"
            ),
        },
    )
    print(f"leveled {len(rows)} questions -> {out / 'levels.jsonl'}")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    if not args.labels or not args.truth:
        raise ValidationError("metrics needs --labels and --truth")
    labels = [
        DifficultyLabel(row["id"], row["label"], row["source"])
        for row in _read_jsonl(Path(args.labels))
    ]
    truth = {row["id"]: bool(row["correct"]) for row in _read_jsonl(Path(args.truth))}
    report = classification_metrics(labels, truth)
    if args.out:
        out = _out_dir(args)
        _write_json(out / "metrics.json", report.to_dict())
        print(
            f"accuracy {report.accuracy:.4f} precision {report.precision:.4f} "
            f"recall {report.recall:.4f} f1 {report.f1:.4f} "
            f"-> {out / 'metrics.json'}"
        )
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    if not args.run:
        raise ValidationError("report needs --run")
    run_dir = Path(args.run)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise ValidationError(f"no report.json under {run_dir}")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report = json.loads(report_path.read_text(encoding="utf-8"))
    from .figures import render_report  # deferred: pulls in matplotlib

    written = render_report(report, out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptmi",
        description="Adaptive skill-based in-context example selection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "annotate": (_cmd_annotate, "annotate questions with required skills"),
        "classify": (_cmd_classify, "label questions easy/difficult"),
        "select": (_cmd_select, "select in-context examples from labels"),
        "run": (_cmd_run, "full two-stage pipeline run"),
        "iterate": (_cmd_iterate, "iterative adaptive runs"),
        "level": (_cmd_level, "difficulty levels from repeated sampling"),
        "metrics": (_cmd_metrics, "score difficulty labels against truth"),
        "report": (_cmd_report, "render figures and summary for a run"),
    }
    for name, (func, help_text) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        _add_common(cmd)
        if name == "select":
            cmd.add_argument("--labels", help="labels JSONL from classify")
            cmd.add_argument("--responses", help="stage1 responses JSONL")
        if name == "metrics":
            cmd.add_argument("--labels", help="labels JSONL")
            cmd.add_argument("--truth", help="truth JSONL with id/correct rows")
        if name == "report":
            cmd.add_argument("--run", help="run directory with report.json")
        cmd.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except (ValidationError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AdaptMIError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
