import json
from pathlib import Path

import numpy as np
import pytest

from curricula.curriculum import RoundPlan
from curricula.curriculum import RoundResult
from curricula.curriculum import RunRecord
from curricula.curriculum import SynFull
from curricula.curriculum import UntilConvergence
from curricula.exceptions import ComparisonError
from curricula.exceptions import ConfigError
from curricula.exceptions import LabelError
from curricula.metrics import AccuracyTable
from curricula.metrics import EfficiencyEntry
from curricula.metrics import build_efficiency_report
from curricula.metrics import dumps_report
from curricula.metrics import dumps_report_csv
from curricula.metrics import evaluate
from curricula.metrics import evaluate_predictions
from curricula.metrics import format_iterations
from curricula.metrics import format_percent
from curricula.metrics import load_report
from curricula.metrics import load_table
from curricula.metrics import parse_table_csv
from curricula.metrics import render_efficiency
from curricula.metrics import render_report
from curricula.metrics import render_table
from curricula.sampling import SamplePool
from curricula.trainer import LINEAR
from curricula.trainer import init_model
from curricula.trainer import predict


GOLDEN = Path(__file__).parent / "golden"
BASE_ROW = "Real (G) + Synthetic (A)"


@pytest.fixture
def table1():
    return load_table(GOLDEN / "table1.json")


@pytest.fixture
def efficiency():
    return load_report(GOLDEN / "efficiency.json")


def test_perfect_predictor():
    y = np.repeat(np.arange(12), 10)
    result = evaluate_predictions(y, y)
    assert result.n_samples == 120
    assert result.top1_accuracy == 1.0
    np.testing.assert_array_equal(result.confusion, np.diag(np.full(12, 10)))
    assert result.per_class_accuracy == (1.0,) * 12


def test_constant_predictor():
    y = np.repeat(np.arange(12), 10)
    result = evaluate_predictions(y, np.zeros_like(y))
    assert result.top1_accuracy == pytest.approx(1 / 12)
    assert result.confusion[:, 0].tolist() == [10] * 12
    assert result.per_class_accuracy[0] == 1.0
    assert result.per_class_accuracy[1] == 0.0


def test_zero_support_class():
    result = evaluate_predictions([0, 0, 1], [0, 1, 1])
    assert result.per_class_accuracy[2] is None
    assert result.support.tolist()[:3] == [2, 1, 0]
    assert result.predicted_counts.tolist()[:3] == [1, 2, 0]
    assert result.to_dict()["top1"] == pytest.approx(2 / 3)


def test_empty_evaluation():
    result = evaluate(init_model_for(4), SamplePool())
    assert result.n_samples == 0
    assert result.top1_accuracy == 0.0


def init_model_for(d):
    return init_model(LINEAR, d, seed=0)


def test_evaluate_matches_prediction_dump(balanced_pool):
    ckpt = init_model_for(4)
    result = evaluate(ckpt, balanced_pool)
    X, y = balanced_pool.arrays()
    dumped = [(int(t), int(p)) for t, p in zip(y, predict(ckpt, X))]
    assert result.top1_accuracy == sum(t == p for t, p in dumped) / len(dumped)
    assert result.confusion.sum() == 120
    assert result.support.tolist() == [10] * 12
    assert result.predicted_counts.tolist() == [sum(p == c for _, p in dumped) for c in range(12)]


def test_evaluate_permutation_invariant(balanced_pool):
    ckpt = init_model_for(4)
    order = np.random.default_rng(0).permutation(len(balanced_pool))
    shuffled = SamplePool([balanced_pool.samples[i] for i in order])
    a, b = evaluate(ckpt, balanced_pool), evaluate(ckpt, shuffled)
    assert a.top1_accuracy == b.top1_accuracy
    np.testing.assert_array_equal(a.confusion, b.confusion)


def test_efficiency_savings(efficiency):
    delta = efficiency.delta("two_step_ft-s_to_r")
    assert delta.iteration_delta == 6500
    assert delta.percent_savings == pytest.approx(0.2297, abs=1e-4)
    assert format_iterations(delta.iteration_delta) == "6.5k"
    assert format_percent(delta.percent_savings) == "23%"
    assert round(delta.accuracy_delta * 100, 2) == 2.78


def test_other_savings_pair():
    report = build_efficiency_report(
        [EfficiencyEntry("naive", 38900, 0.7), EfficiencyEntry("progressive", 24500, 0.7)], "naive"
    )
    [delta] = report.deltas
    assert f"{format_iterations(delta.iteration_delta)} ({format_percent(delta.percent_savings)})" == "14.4k (37%)"


def test_identical_entries():
    report = build_efficiency_report([EfficiencyEntry("a", 100, 0.5), EfficiencyEntry("b", 100, 0.5)], "a")
    [delta] = report.deltas
    assert (delta.iteration_delta, delta.percent_savings, delta.accuracy_delta) == (0, 0.0, 0.0)


def test_report_errors():
    with pytest.raises(ComparisonError, match="at least 2"):
        build_efficiency_report([EfficiencyEntry("a", 1, 0.5)], "a")
    with pytest.raises(LabelError, match="duplicate"):
        build_efficiency_report([EfficiencyEntry("a", 1, 0.5), EfficiencyEntry("a", 2, 0.5)], "a")
    with pytest.raises(LabelError, match="'c' is not one of a, b"):
        build_efficiency_report([EfficiencyEntry("a", 1, 0.5), EfficiencyEntry("b", 2, 0.5)], "c")


def test_report_from_run_records():
    plan = RoundPlan(1, SynFull, UntilConvergence(), 0.1)
    items = []
    for label, iterations, y_pred in (("naive", 300, [0, 1, 1]), ("progressive", 200, [0, 1, 2])):
        record = RunRecord(label, 0, [RoundResult(plan, iterations, "0" * 16, 1, 10)])
        items.append((record, evaluate_predictions([0, 1, 2], y_pred)))
    report = build_efficiency_report(items, "naive")
    delta = report.delta("progressive")
    assert delta.iteration_delta == 100
    assert delta.accuracy_delta == pytest.approx(1 / 3)
    assert set(report.confusion) == {"naive", "progressive"}


def test_percent_recomputes_from_absolutes(efficiency):
    for d in efficiency.deltas:
        base = efficiency.entry(d.base).total_iterations
        shown = int(format_percent(d.percent_savings).rstrip("%"))
        assert abs(shown - 100 * d.iteration_delta / base) <= 0.5


@pytest.mark.parametrize("n, text", [(6500, "6.5k"), (28300, "28.3k"), (999, "999"), (0, "0"), (-3300, "-3.3k")])
def test_format_iterations(n, text):
    assert format_iterations(n) == text


def test_format_percent_half_up():
    assert format_percent(0.125) == "13%"
    assert format_percent(0.0) == "0%"
    assert format_percent(-0.08) == "-8%"


def test_table1_golden(table1):
    text = render_report(table1, None, BASE_ROW)
    assert text == (GOLDEN / "table1.md").read_text()


def test_report_golden(table1, efficiency):
    text = render_report(table1, efficiency, BASE_ROW)
    assert text == (GOLDEN / "report.md").read_text()


def test_slowfast_t1_delta(table1):
    deltas = table1.deltas(BASE_ROW)
    assert round(deltas.row("Non-Progressive + FT (S-to-R)")[0], 2) == 2.78
    assert [label for label, _ in deltas.rows if label == BASE_ROW] == []


def test_single_row_table():
    table = AccuracyTable(["Top-1 (%)"], [("naive", [58.12])])
    text = render_table(table, "markdown")
    assert text == "| Training Strategy | Top-1 (%) |\n|---|---:|\n| naive | 58.12 |\n"


def test_csv_idempotent(table1):
    text = render_table(table1, "csv")
    assert text.splitlines()[0] == "strategy,SlowFast (T1),SlowFast (T2),MViTv2 (T1),MViTv2 (T2)"
    assert render_table(parse_table_csv(text), "csv") == text


def test_json_table(table1, tmp_path):
    path = tmp_path / "t.json"
    path.write_text(render_table(table1, "json"))
    assert load_table(path) == table1


def test_missing_values():
    table = AccuracyTable(["a", "b"], [("x", [1.0, None]), ("y", [2.0, 3.0])])
    assert "| x | 1.00 | - |" in render_table(table)
    assert render_table(table.deltas("y"), signed=True).splitlines()[-1] == "| x | -1.00 | - |"
    assert render_table(table, "csv").splitlines()[1] == "x,1.0,"


def test_table_errors(table1):
    with pytest.raises(ConfigError):
        AccuracyTable(["a"], [("x", [1.0, 2.0])])
    with pytest.raises(LabelError):
        table1.row("nope")
    with pytest.raises(ConfigError, match="unknown table format"):
        render_table(table1, "html")


def test_render_efficiency_untitled():
    report = build_efficiency_report([EfficiencyEntry("naive", 900, 0.5), EfficiencyEntry("progressive", 1200, 0.5)], "naive")
    lines = render_efficiency(report).splitlines()
    assert lines[2] == "| naive | 900 | - | 50.00 | - |"
    assert lines[3] == "| progressive | 1.2k | -300 (-33%) | 50.00 | +0.00 |"


def test_report_round_trip(efficiency, tmp_path):
    efficiency.confusion = {"naive": np.eye(12, dtype=int).tolist()}
    path = tmp_path / "report.json"
    path.write_text(dumps_report(efficiency))
    loaded = load_report(path)
    assert dumps_report(loaded) == path.read_text()
    assert loaded.entry("naive").title == BASE_ROW
    assert json.loads(path.read_text())["deltas"][0]["iteration_delta"] == 6500


def test_report_csv(efficiency):
    lines = dumps_report_csv(efficiency).splitlines()
    assert lines[0] == "label,total_iterations,top1,iteration_delta,percent_savings,accuracy_delta"
    assert lines[1] == "naive,28300,0.5812,0,0.0,0.0"
    assert lines[2].startswith("two_step_ft-s_to_r,21800,0.609,6500,")


def test_bad_report(tmp_path):
    path = tmp_path / "report.json"
    path.write_text("{")
    with pytest.raises(ComparisonError, match="cannot read report"):
        load_report(path)
    path.write_text('{"base": "a", "entries": [{"label": "a"}]}')
    with pytest.raises(ComparisonError, match="malformed"):
        load_report(path)
