"""Figure and delimited-summary rendering for run reports.

Works off the JSON form of a run report so the CLI report path can render
straight from trace files.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_summary_csv(report: Mapping, path: str | Path) -> Path:
    """One delimited row per accuracy bucket (overall, subject, label)."""
    path = Path(path)
    totals = report.get("totals", {})
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "name", "total", "correct", "accuracy"])
        writer.writerow(
            [
                "overall",
                "overall",
                totals.get("graded", 0),
                totals.get("correct", 0),
                f"{report.get('overall_accuracy', 0.0):.6f}",
            ]
        )
        for section, acc_key, count_key in (
            ("subject", "subject_accuracy", "subject_counts"),
            ("label", "label_accuracy", "label_counts"),
        ):
            accuracies = report.get(acc_key, {})
            counts = report.get(count_key, {})
            for name in sorted(accuracies):
                c = counts.get(name, {})
                writer.writerow(
                    [
                        section,
                        name,
                        c.get("total", 0),
                        c.get("correct", 0),
                        f"{accuracies[name]:.6f}",
                    ]
                )
    return path


def _bar_chart(
    labels: Sequence[str], values: Sequence[float], title: str, path: Path
) -> Path:
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 3.2))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_subject_accuracy(report: Mapping, path: str | Path) -> Path:
    acc = report.get("subject_accuracy", {})
    names = sorted(acc)
    return _bar_chart(
        names, [acc[n] for n in names], "Accuracy by subject", Path(path)
    )


def plot_label_accuracy(report: Mapping, path: str | Path) -> Path:
    acc = report.get("label_accuracy", {})
    names = sorted(acc)
    return _bar_chart(
        names, [acc[n] for n in names], "Accuracy by difficulty label", Path(path)
    )


def plot_iteration_accuracy(accuracies: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    xs = range(1, len(accuracies) + 1)
    ax.plot(xs, list(accuracies), marker="o", color="#4878a8")
    ax.set_xticks(list(xs))
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("accuracy")
    ax.set_title("Accuracy per iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report(report: Mapping, out_dir: str | Path) -> list[Path]:
    """Write the delimited summary and every applicable figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [write_summary_csv(report, out / "summary.csv")]
    if report.get("subject_accuracy"):
        written.append(
            plot_subject_accuracy(report, out / "accuracy_by_subject.png")
        )
    if report.get("label_accuracy"):
        written.append(plot_label_accuracy(report, out / "accuracy_by_label.png"))
    iteration = report.get("iteration_accuracy") or []
    if len(iteration) > 1:
        written.append(
            plot_iteration_accuracy(iteration, out / "iteration_accuracy.png")
        )
    return written
