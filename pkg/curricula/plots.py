from __future__ import annotations

import logging
import typing as t
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import ACTION_CLASSES  # noqa: E402
from .metrics import AccuracyTable  # noqa: E402
from .metrics import EfficiencyReport  # noqa: E402
from .metrics import format_iterations  # noqa: E402


log: logging.Logger = logging.getLogger(__name__)

# fixed ids and no timestamp, so the same report renders to the same bytes
_RC = {"svg.hashsalt": "curricula", "svg.fonttype": "path", "font.family": "DejaVu Sans"}


def _save(fig: plt.Figure, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    log.debug("wrote %s", path)
    return path


def _name(report: EfficiencyReport, label: str) -> str:
    entry = report.entry(label)
    return entry.title or entry.label


def accuracy_vs_iterations(report: EfficiencyReport, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for e in report.entries:
            ax.scatter(e.total_iterations, e.top1 * 100, s=60, marker="*" if e.label == report.base else "o")
            ax.annotate(
                e.title or e.label,
                (e.total_iterations, e.top1 * 100),
                textcoords="offset points",
                xytext=(5, 5),
                fontsize=8,
            )
        ax.set_xlabel("training iterations")
        ax.set_ylabel("top-1 accuracy (%)")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)


def accuracy_bars(table: AccuracyTable, path: Path) -> Path:
    """Grouped bars: one group per strategy, one bar per column (test set / model)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(table.rows)), 4.5))
        x = np.arange(len(table.rows))
        width = 0.8 / max(len(table.columns), 1)
        for i, column in enumerate(table.columns):
            values = [np.nan if v[i] is None else v[i] for _, v in table.rows]
            ax.bar(x + (i - (len(table.columns) - 1) / 2) * width, values, width, label=column)
        ax.set_xticks(x)
        ax.set_xticklabels([label for label, _ in table.rows], rotation=20, ha="right", fontsize=8)
        ax.set_ylabel("top-1 accuracy (%)")
        if len(table.columns) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        return _save(fig, path)


def iteration_bars(report: EfficiencyReport, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(report.entries)), 4.5))
        names = [e.title or e.label for e in report.entries]
        counts = [e.total_iterations for e in report.entries]
        bars = ax.bar(np.arange(len(counts)), counts)
        for bar, n in zip(bars, counts):
            ax.annotate(
                format_iterations(n),
                (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                ha="center",
                va="bottom",
                fontsize=8,
            )
        ax.set_xticks(np.arange(len(counts)))
        ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel("training iterations")
        fig.tight_layout()
        return _save(fig, path)


def confusion_heatmap(confusion: t.Sequence[t.Sequence[int]], title: str, path: Path) -> Path:
    """Row-normalised heatmap; rows without support stay at zero."""
    cm = np.asarray(confusion, dtype=np.float64)
    support = cm.sum(axis=1, keepdims=True)
    normed = np.divide(cm, support, out=np.zeros_like(cm), where=support > 0)
    names = [c.name for c in ACTION_CLASSES][: cm.shape[0]]
    names += [str(i) for i in range(len(names), cm.shape[0])]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 6))
        im = ax.imshow(normed, vmin=0, vmax=1, cmap="Blues")
        fig.colorbar(im, ax=ax)
        ax.set_xticks(np.arange(cm.shape[1]))
        ax.set_yticks(np.arange(cm.shape[0]))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_yticklabels(names, fontsize=7)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def render_plots(
    report: EfficiencyReport, directory: Path, table: AccuracyTable | None = None
) -> list[Path]:
    if not report.entries:
        raise ValueError("empty report")
    directory = Path(directory)
    if table is None:
        table = AccuracyTable.from_report(report)
    paths = [
        accuracy_vs_iterations(report, directory / "accuracy_vs_iterations.svg"),
        accuracy_bars(table, directory / "accuracy_bars.svg"),
        iteration_bars(report, directory / "iteration_bars.svg"),
    ]
    for label, confusion in sorted(report.confusion.items()):
        paths.append(confusion_heatmap(confusion, _name(report, label), directory / f"confusion_{label}.svg"))
    log.info("wrote %d plots to %s", len(paths), directory)
    return paths
