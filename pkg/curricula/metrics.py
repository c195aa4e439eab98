"""
Top-1 accuracy, confusion matrices and iteration-efficiency comparisons, plus
their csv / json / markdown renderings.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import typing as t
from dataclasses import dataclass
from dataclasses import field
from decimal import ROUND_HALF_UP
from decimal import Decimal
from pathlib import Path

import numpy as np

from .dataset import NUM_CLASSES
from .exceptions import ComparisonError
from .exceptions import ConfigError
from .exceptions import LabelError
from .sampling import SamplePool
from .trainer import ModelCheckpoint
from .trainer import predict
from .types import ReportDelta
from .types import ReportDict
from .types import ReportEntry
from .types import TableFormat
from .utils import dumps_json

if t.TYPE_CHECKING:
    from .curriculum import RunRecord


log: logging.Logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalResult:
    n_samples: int
    top1_accuracy: float
    confusion: np.ndarray  # rows = true class, columns = predicted
    per_class_accuracy: tuple[float | None, ...]  # None where a class has no support

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def predicted_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=0)

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "n_samples": self.n_samples,
            "top1": self.top1_accuracy,
            "confusion": self.confusion.tolist(),
            "per_class_accuracy": list(self.per_class_accuracy),
        }


def evaluate_predictions(
    y_true: t.Sequence[int] | np.ndarray,
    y_pred: t.Sequence[int] | np.ndarray,
    n_classes: int = NUM_CLASSES,
) -> EvalResult:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"{y_true.shape[0]} labels but {y_pred.shape[0]} predictions")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    n = int(y_true.shape[0])
    support = confusion.sum(axis=1)
    per_class = tuple(
        float(confusion[c, c] / support[c]) if support[c] else None for c in range(n_classes)
    )
    top1 = float(np.trace(confusion) / n) if n else 0.0
    return EvalResult(n, top1, confusion, per_class)


def evaluate(ckpt: ModelCheckpoint, test_pool: SamplePool, n_classes: int = NUM_CLASSES) -> EvalResult:
    """Argmax predictions on every sample of the pool; ties go to the smaller class id."""
    if not len(test_pool):
        return evaluate_predictions([], [], n_classes)
    X, y = test_pool.arrays()
    return evaluate_predictions(y, predict(ckpt, X), n_classes)


@dataclass(frozen=True)
class EfficiencyEntry:
    label: str
    total_iterations: int
    top1: float
    title: str = ""


@dataclass(frozen=True)
class EfficiencyDelta:
    label: str
    base: str
    iteration_delta: int  # base - other: positive when `label` is cheaper
    percent_savings: float  # ratio, (base - other) / base
    accuracy_delta: float  # other - base, as a ratio

    def to_dict(self) -> ReportDelta:
        return {
            "label": self.label,
            "base": self.base,
            "iteration_delta": self.iteration_delta,
            "percent_savings": self.percent_savings,
            "accuracy_delta": self.accuracy_delta,
        }


@dataclass
class EfficiencyReport:
    base: str
    entries: list[EfficiencyEntry]
    deltas: list[EfficiencyDelta]
    confusion: dict[str, list[list[int]]] = field(default_factory=dict)
    extra: dict[str, t.Any] = field(default_factory=dict)

    def entry(self, label: str) -> EfficiencyEntry:
        for e in self.entries:
            if e.label == label:
                return e
        raise LabelError(f"no entry labelled {label!r}")

    def delta(self, label: str) -> EfficiencyDelta:
        for d in self.deltas:
            if d.label == label:
                return d
        raise LabelError(f"no delta for {label!r}")

    def to_dict(self) -> ReportDict:
        entries: list[ReportEntry] = [
            {"label": e.label, "total_iterations": e.total_iterations, "top1": e.top1}
            for e in self.entries
        ]
        titles = {e.label: e.title for e in self.entries if e.title}
        extra = dict(self.extra)
        if titles:
            extra["titles"] = titles
        return {
            "base": self.base,
            "entries": entries,
            "deltas": [d.to_dict() for d in self.deltas],
            "confusion": self.confusion,
            "extra": extra,
        }

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> EfficiencyReport:
        extra = dict(data.get("extra", {}))
        titles = extra.pop("titles", {})
        try:
            entries = [
                EfficiencyEntry(e["label"], int(e["total_iterations"]), float(e["top1"]), titles.get(e["label"], ""))
                for e in data["entries"]
            ]
            report = build_efficiency_report(entries, data["base"])
        except (KeyError, TypeError, ValueError) as err:
            raise ComparisonError(f"malformed report: {err}") from None
        report.confusion = {k: [list(map(int, row)) for row in v] for k, v in data.get("confusion", {}).items()}
        report.extra = extra
        return report


def entry_for_run(record: RunRecord, result: EvalResult, title: str = "") -> EfficiencyEntry:
    return EfficiencyEntry(record.strategy, record.total_iterations, result.top1_accuracy, title)


def build_efficiency_report(
    results: t.Iterable[EfficiencyEntry | tuple[RunRecord, EvalResult]],
    base_label: str,
) -> EfficiencyReport:
    """
    Compare every entry against the named base entry. Items are either plain
    EfficiencyEntry values or (RunRecord, EvalResult) pairs; pairs also contribute
    their confusion matrix to the report.
    """
    entries = []
    confusion = {}
    for item in results:
        if isinstance(item, EfficiencyEntry):
            entries.append(item)
        else:
            record, result = item
            entries.append(entry_for_run(record, result))
            confusion[record.strategy] = result.confusion.tolist()
    labels = [e.label for e in entries]
    if len(entries) < 2:
        raise ComparisonError(f"need at least 2 entries to compare, got {len(entries)}")
    dupes = sorted({x for x in labels if labels.count(x) > 1})
    if dupes:
        raise LabelError(f"duplicate entry label(s): {', '.join(dupes)}")
    if base_label not in labels:
        raise LabelError(f"base {base_label!r} is not one of {', '.join(labels)}")
    base = entries[labels.index(base_label)]
    deltas = []
    for e in entries:
        if e.label == base_label:
            continue
        saved = base.total_iterations - e.total_iterations
        percent = saved / base.total_iterations if base.total_iterations else 0.0
        deltas.append(EfficiencyDelta(e.label, base_label, saved, percent, e.top1 - base.top1))
    return EfficiencyReport(base_label, entries, deltas, confusion)


def format_iterations(n: int) -> str:
    """6500 -> '6.5k'. Counts below a thousand are printed as they are."""
    if abs(n) < 1000:
        return str(n)
    return f"{n / 1000:.1f}k"


def format_percent(ratio: float) -> str:
    """0.2297 -> '23%' (half-up to whole percent)."""
    value = Decimal(repr(ratio * 100)).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return f"{value}%"


def format_points(value: float | None, signed: bool = False) -> str:
    if value is None:
        return "-"
    return f"{value:+.2f}" if signed else f"{value:.2f}"


@dataclass
class AccuracyTable:
    """Top-1 accuracy in percent, one row per training strategy, one column per test setting."""

    columns: list[str]
    rows: list[tuple[str, list[float | None]]]

    def __post_init__(self) -> None:
        for label, values in self.rows:
            if len(values) != len(self.columns):
                raise ConfigError(f"row {label!r} has {len(values)} values for {len(self.columns)} columns")

    def row(self, label: str) -> list[float | None]:
        for name, values in self.rows:
            if name == label:
                return values
        raise LabelError(f"no row labelled {label!r}")

    def deltas(self, base_label: str) -> AccuracyTable:
        """Every other row minus the base row, in accuracy points."""
        base = self.row(base_label)
        rows = []
        for label, values in self.rows:
            if label == base_label:
                continue
            rows.append(
                (label, [None if v is None or b is None else v - b for v, b in zip(values, base)])
            )
        return AccuracyTable(list(self.columns), rows)

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "columns": list(self.columns),
            "rows": [{"label": label, "values": list(values)} for label, values in self.rows],
        }

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> AccuracyTable:
        try:
            rows = [(r["label"], [None if v is None else float(v) for v in r["values"]]) for r in data["rows"]]
            return cls(list(data["columns"]), rows)
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"malformed accuracy table: {err}") from None

    @classmethod
    def from_report(cls, report: EfficiencyReport, column: str = "Top-1 (%)") -> AccuracyTable:
        return cls([column], [(e.title or e.label, [e.top1 * 100]) for e in report.entries])


def load_table(path: Path) -> AccuracyTable:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".csv":
        return parse_table_csv(text)
    return AccuracyTable.from_dict(json.loads(text))


def parse_table_csv(text: str) -> AccuracyTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = [(r[0], [float(v) if v else None for v in r[1:]]) for r in reader if r]
    return AccuracyTable(header[1:], rows)


def _markdown(header: list[str], body: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|")
    lines.extend("| " + " | ".join(row) + " |" for row in body)
    return "\n".join(lines) + "\n"


def render_table(
    results: AccuracyTable, format: TableFormat = "markdown", signed: bool = False
) -> str:
    """csv and json keep full precision; markdown shows two decimals."""
    if format == "json":
        return dumps_json(results.to_dict())
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["strategy", *results.columns])
        for label, values in results.rows:
            writer.writerow([label, *("" if v is None else repr(v) for v in values)])
        return buf.getvalue()
    if format == "markdown":
        body = [[label, *(format_points(v, signed) for v in values)] for label, values in results.rows]
        return _markdown(["Training Strategy", *results.columns], body)
    raise ConfigError(f"unknown table format {format!r}")


def render_efficiency(report: EfficiencyReport) -> str:
    body = []
    for e in report.entries:
        name = e.title or e.label
        if e.label == report.base:
            body.append([name, format_iterations(e.total_iterations), "-", format_points(e.top1 * 100), "-"])
            continue
        d = report.delta(e.label)
        body.append(
            [
                name,
                format_iterations(e.total_iterations),
                f"{format_iterations(d.iteration_delta)} ({format_percent(d.percent_savings)})",
                format_points(e.top1 * 100),
                format_points(d.accuracy_delta * 100, signed=True),
            ]
        )
    return _markdown(["Training Strategy", "Iterations", "Savings", "Top-1 (%)", "Δ Top-1"], body)


def render_report(
    table: AccuracyTable | None = None,
    report: EfficiencyReport | None = None,
    base_row: str | None = None,
) -> str:
    """
    report.md body: the accuracy table, its per-column differences against
    base_row, and the training-cost comparison.
    """
    parts = []
    if table is not None:
        parts.append("## Top-1 accuracy (%)\n\n" + render_table(table, "markdown"))
        if base_row is not None:
            deltas = table.deltas(base_row)
            parts.append(f"## Difference to {base_row} (points)\n\n" + render_table(deltas, "markdown", signed=True))
    if report is not None:
        base = report.entry(report.base)
        parts.append(f"## Training cost vs {base.title or base.label}\n\n" + render_efficiency(report))
    if not parts:
        raise ValueError("nothing to render")
    return "\n".join(parts)


def dumps_report_csv(report: EfficiencyReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "total_iterations", "top1", "iteration_delta", "percent_savings", "accuracy_delta"])
    deltas = {d.label: d for d in report.deltas}
    for e in report.entries:
        d = deltas.get(e.label)
        writer.writerow(
            [
                e.label,
                e.total_iterations,
                repr(e.top1),
                d.iteration_delta if d else 0,
                repr(d.percent_savings) if d else repr(0.0),
                repr(d.accuracy_delta) if d else repr(0.0),
            ]
        )
    return buf.getvalue()


def dumps_report(report: EfficiencyReport) -> str:
    return dumps_json(report.to_dict())


def load_report(path: Path) -> EfficiencyReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        raise ComparisonError(f"cannot read report {path}: {err}") from None
    return EfficiencyReport.from_dict(data)
