"""
Rendering of run results into a markdown summary, plot-ready CSVs and bar charts.
"""
import os
from collections.abc import Mapping, Sequence
from typing import TYPE_CHECKING, Optional

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  pylint: disable=wrong-import-position

from src.evaluation.matrix import METRICS, summarize  # noqa: E402
from src.utils.saver import get_saver_strategy  # noqa: E402

if TYPE_CHECKING:
    from matplotlib.figure import Figure

# Published full-model results on the real market, shown for context only.
REFERENCE_VALUES: dict[tuple[str, int, str], dict[str, float]] = {
    ("collection", 1, "full"): {"acc": 0.6075, "mcc": 0.1861},
    ("token", 1, "full"): {"mae": 0.3442, "mse": 1.5825},
}


def markdown_table(frame: pd.DataFrame, digits: int = 4) -> str:
    def cell(value) -> str:
        if isinstance(value, (float, np.floating)):
            return "" if np.isnan(value) else f"{value:.{digits}f}"
        return str(value)

    lines = [
        "| " + " | ".join(str(c) for c in frame.columns) + " |",
        "|" + "|".join("---" for _ in frame.columns) + "|",
    ]
    for row in frame.itertuples(index=False):
        lines.append("| " + " | ".join(cell(v) for v in row) + " |")
    return "\n".join(lines)


def reference_rows(summary: pd.DataFrame) -> pd.DataFrame:
    """Reference values of the (task, step, variant) groups present in `summary`."""
    present = {(str(t), int(s), str(v)) for t, s, v in summary[["task", "step", "variant"]].itertuples(index=False)}
    rows = [
        {"task": task, "step": step, "variant": variant, **values}
        for (task, step, variant), values in REFERENCE_VALUES.items()
        if (task, step, variant) in present
    ]
    return pd.DataFrame(rows)


def draw_ablation_figure(summary: pd.DataFrame, metric: str) -> 'Figure':
    """Grouped bars of `metric` per variant, one group per step, with std error bars."""
    steps = sorted(summary["step"].unique())
    variants = list(dict.fromkeys(summary["variant"]))
    width = 0.8 / max(len(variants), 1)

    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(steps) * len(variants)), 4))
    for i, variant in enumerate(variants):
        rows = summary[summary["variant"] == variant].set_index("step")
        means = [rows[f"{metric}_mean"].get(step, np.nan) for step in steps]
        stds = [rows[f"{metric}_std"].get(step, np.nan) for step in steps]
        ax.bar(np.arange(len(steps)) + i * width, means, width, yerr=stds, label=variant, capsize=3)

    ax.set_xticks(np.arange(len(steps)) + width * (len(variants) - 1) / 2)
    ax.set_xticklabels([f"N={step}" for step in steps])
    ax.set_ylabel(metric.upper())
    ax.set_title(f"{metric.upper()} by variant")
    ax.legend()

    plt.tight_layout()

    return fig


def draw_importance_figure(importance: pd.DataFrame) -> 'Figure':
    fig, ax = plt.subplots()
    ax.barh(importance["feature"], importance["score"], xerr=importance.get("std"), capsize=3)
    ax.set_xlabel("Accuracy drop")
    ax.set_title("Permutation importance")

    plt.tight_layout()

    return fig


def _save_figure(fig: 'Figure', file: str) -> str:
    fig.savefig(file, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return file


def render_report(
    report: pd.DataFrame,
    out_dir: str,
    importance: Optional[pd.DataFrame] = None,
    breakdown: Optional[pd.DataFrame] = None,
    notes: Sequence[str] = (),
) -> list[str]:
    """
    Write report.md, summary.csv, reference.csv and figures into `out_dir`.

    Returns:
        list[str]: Names of the written files, relative to `out_dir`.
    """
    csv = get_saver_strategy("csv")
    summary = summarize(report)
    written = [os.path.basename(csv.save(os.path.join(out_dir, "summary.csv"), summary))]
    references = reference_rows(summary) if not summary.empty else pd.DataFrame()
    if not references.empty:
        written.append(os.path.basename(csv.save(os.path.join(out_dir, "reference.csv"), references)))

    sections = ["# Run report", ""]
    sections += [f"- {note}" for note in notes]
    sections += ["", "## Summary (mean and std over seeds)", "", markdown_table(summary)]
    if not references.empty:
        sections += [
            "", "## Reference values",
            "", "Full-model results published for the real market. Not comparable with synthetic runs.",
            "", markdown_table(references),
        ]

    failed = report[report["status"] != "ok"]
    if not failed.empty:
        sections += ["", "## Failed cells", "", markdown_table(failed[["cell_id", "error"]])]

    for metric in METRICS:
        if metric in report and report[metric].notna().any():
            name = f"ablation_{metric}.png"
            _save_figure(draw_ablation_figure(summary, metric), os.path.join(out_dir, name))
            written.append(name)
            sections += ["", f"![{metric}]({name})"]

    if importance is not None and not importance.empty:
        written.append(os.path.basename(csv.save(os.path.join(out_dir, "importance.csv"), importance)))
        _save_figure(draw_importance_figure(importance), os.path.join(out_dir, "importance.png"))
        written.append("importance.png")
        sections += ["", "## Permutation importance", "", markdown_table(importance), "", "![importance](importance.png)"]

    if breakdown is not None and not breakdown.empty:
        written.append(os.path.basename(csv.save(os.path.join(out_dir, "breakdown.csv"), breakdown)))
        sections += ["", "## Per-collection results", "", markdown_table(breakdown)]

    with open(os.path.join(out_dir, "report.md"), "w", encoding="utf-8") as f:
        f.write("\n".join(sections) + "\n")
    written.append("report.md")
    return written


def read_reports(files: Mapping[str, str]) -> pd.DataFrame:
    """Concatenate report CSVs that exist, in the given order."""
    frames = [pd.read_csv(file, keep_default_na=False, na_values=[""]) for file in files.values() if os.path.exists(file)]
    if not frames:
        return pd.DataFrame()
    return pd.concat(frames, ignore_index=True)
