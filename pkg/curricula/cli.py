from __future__ import annotations

import argparse
import logging
import sys
import typing as t
from dataclasses import replace
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version
from pathlib import Path

from rich.console import Console
from rich.table import Table

from .benchgen import DEFAULT_SPEC
from .benchgen import emit_bundle
from .benchgen import generate_benchmark
from .benchgen import load_spec
from .clips import window_report
from .config import RunConfig
from .config import load_config
from .curriculum import STRATEGY_NAMES
from .curriculum import Progressive
from .curriculum import StrategyKind
from .curriculum import TwoStepFT
from .curriculum import load_run_record
from .curriculum import parse_strategy
from .curriculum import title_for_label
from .dataset import ACTION_CLASSES
from .exceptions import ComparisonError
from .exceptions import ConfigError
from .exceptions import CurriculaError
from .exceptions import FormatError
from .exceptions import IntegrityError
from .metrics import AccuracyTable
from .metrics import EfficiencyEntry
from .metrics import EfficiencyReport
from .metrics import EvalResult
from .metrics import build_efficiency_report
from .metrics import dumps_report
from .metrics import dumps_report_csv
from .metrics import evaluate
from .metrics import load_report
from .metrics import load_table
from .metrics import render_report
from .metrics import render_table
from .plots import render_plots
from .runner import load_manifests
from .runner import load_sources
from .runner import run_strategies
from .sampling import SamplePool
from .sampling import oversample_balance
from .sampling import save_pool
from .trainer import load_checkpoint
from .trainer import predict
from .utils import atomic_write_file
from .utils import configure_logging
from .utils import derive_seed


log: logging.Logger = logging.getLogger(__name__)


def _version() -> str:
    try:
        return version("curricula")
    except PackageNotFoundError:
        return "unknown"


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="YAML run configuration")
    common.add_argument("-s", "--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("-o", "--out", type=Path, help="output directory (overrides the config)")
    common.add_argument(
        "-f",
        "--force",
        action="store_true",
        help="overwrite existing outputs. Without it, commands refuse to.",
    )
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        help=(
            "Increased logging (-v INFO, -vv DEBUG). "
            "Default level is logging.WARNING, or $CURRICULA_LOG if set."
        ),
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="curricula",
        description="Curriculum training strategies for out-of-domain action recognition",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s v{_version()}")
    sub = parser.add_subparsers(dest="command", metavar="<command>", required=True)

    p = sub.add_parser("prepare", parents=[common], help="window, filter and balance the training sources")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("bench", parents=[common], help="generate a synthetic three-domain benchmark")
    p.add_argument("spec", nargs="?", type=Path, help="benchmark spec JSON (default: built-in spec)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", parents=[common], help="train one or more curriculum strategies")
    p.add_argument("--strategy", nargs="+", choices=STRATEGY_NAMES, help="strategies to run (default: from config)")
    p.add_argument("--direction", choices=["s_to_r", "r_to_s"], help="source order for two_step_ft / progressive")
    p.add_argument("--rounds", type=int, help="progressive rounds (other than 3 needs fractions in the config)")
    p.add_argument("-j", "--jobs", type=int, default=1, help="strategies trained in parallel (default: %(default)s)")
    p.add_argument("-t", "--timeout", type=float, help="kill a run after this many seconds")
    p.add_argument("--reset-optimizer", action="store_true", help="zero AdamW moments at every round boundary")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="evaluate finished runs and build an efficiency report")
    p.add_argument("runs", nargs="*", type=Path, help="run directories (default: every run under the output dir)")
    p.add_argument("-b", "--base", help="label of the base strategy (default: naive, if present)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", parents=[common], help="re-render a report, or render an accuracy table")
    p.add_argument("report", nargs="?", type=Path, help="report.json written by compare")
    p.add_argument("--table", type=Path, help="accuracy table (json or csv, values in percent)")
    p.add_argument("--base-row", help="table row to compute per-column differences against")
    p.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: t.Sequence[str] | None = None) -> t.NoReturn:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        rc = args.func(args)
    except CurriculaError as err:
        print(f"curricula: error: {err}", file=sys.stderr)
        sys.exit(err.exit_code)
    except OSError as err:
        print(f"curricula: error: {err}", file=sys.stderr)
        sys.exit(2)
    sys.exit(rc)


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides: dict[str, t.Any] = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return replace(cfg, **overrides)


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists (use --force to overwrite)")


def _class_table(title: str, columns: dict[str, dict[int, int]]) -> Table:
    table = Table(title=title)
    table.add_column("id", justify="right")
    table.add_column("class")
    for name in columns:
        table.add_column(name, justify="right")
    for c in ACTION_CLASSES:
        table.add_row(str(c.id), c.name, *(str(counts.get(c.id, 0)) for counts in columns.values()))
    return table


def cmd_prepare(args: argparse.Namespace) -> int:
    cfg = _config(args)
    cfg.validate()
    out = Path(cfg.out_dir) / "prepared"
    _guard(out, args.force)
    sources = load_sources(cfg)
    seed = derive_seed(cfg.master_seed, 0)
    pools = {
        "syn_aerial": oversample_balance(replace(sources.syn, seed=seed), cfg.target_per_class),
        "real_ground": oversample_balance(replace(sources.real, seed=seed), cfg.target_per_class),
        "real_aerial": sources.test,
    }
    for name, pool in pools.items():
        save_pool(pool, out / f"{name}.pool")
    console = Console()
    console.print(_class_table("samples per class", {k: p.class_counts() for k, p in pools.items()}))
    if cfg.data.bundle is None:
        windows = Table(title="windows per domain")
        for col in ("manifest", "domain", "clips", "windows", "retained"):
            windows.add_column(col, justify="right" if col in ("clips", "windows", "retained") else "left")
        for name, manifest in load_manifests(cfg).items():
            for domain, stats in window_report(manifest, cfg.windowing).items():
                windows.add_row(name, domain, str(stats["clips"]), str(stats["windows"]), str(stats["retained"]))
        console.print(windows)
    print(f"wrote {len(pools)} pools to {out}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec) if args.spec is not None else DEFAULT_SPEC
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = args.out if args.out is not None else Path("bench")
    _guard(out / "spec.json", args.force)
    bundle = generate_benchmark(spec)
    written = emit_bundle(bundle, out)
    print(f"wrote {len(written)} files to {out}")
    return 0


def _strategies(args: argparse.Namespace, cfg: RunConfig) -> tuple[StrategyKind, ...]:
    if args.strategy:
        fractions = None
        for s in cfg.strategies:
            if isinstance(s, Progressive) and s.fractions is not None:
                fractions = s.fractions
        return tuple(parse_strategy(name, args.direction, args.rounds, fractions) for name in args.strategy)
    strategies = cfg.strategies
    if args.direction is not None:
        strategies = tuple(
            replace(s, direction=args.direction) if isinstance(s, (TwoStepFT, Progressive)) else s
            for s in strategies
        )
    if args.rounds is not None:
        strategies = tuple(replace(s, rounds=args.rounds) if isinstance(s, Progressive) else s for s in strategies)
    return strategies


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.timeout is not None:
        cfg = replace(cfg, timeout=args.timeout or None)
    if args.reset_optimizer:
        cfg = replace(cfg, reset_optimizer=True)
    cfg = replace(cfg, strategies=_strategies(args, cfg))
    cfg.validate()
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    return run_strategies(cfg, cfg.strategies, cfg.out_dir, jobs=args.jobs, force=args.force)


def _final_checkpoint(run_dir: Path, record: dict[str, t.Any]) -> Path:
    if not record["rounds"]:
        raise ComparisonError(f"{run_dir}: run has no completed rounds")
    last = record["rounds"][-1]
    path = run_dir / f"round_{last['round']}" / "checkpoint.ckpt"
    if not path.is_file():
        raise ComparisonError(f"{run_dir}: missing final checkpoint {path.name} for round {last['round']}")
    return path


def _dump_predictions(pool: SamplePool, y_pred: t.Sequence[int]) -> str:
    lines = ["clip_id\tstart_frame\ttrue\tpred"]
    lines.extend(f"{s.clip_id}\t{s.start_frame}\t{s.label}\t{int(p)}" for s, p in zip(pool.samples, y_pred))
    return "\n".join(lines) + "\n"


def _discover_runs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise ComparisonError(f"no run directory {root}")
    return sorted(p for p in root.iterdir() if (p / "run_record.json").is_file())


def cmd_compare(args: argparse.Namespace) -> int:
    runs = [Path(r) for r in args.runs] or _discover_runs(Path(_config(args).out_dir))
    if not runs:
        raise ComparisonError("no runs to compare")
    records = {}
    for run_dir in runs:
        try:
            records[run_dir] = load_run_record(run_dir / "run_record.json")
        except (OSError, ValueError, KeyError) as err:
            raise ComparisonError(f"{run_dir}: unusable run_record.json ({err})") from None
    if args.config is None:
        args.config = runs[0] / "config.yaml"
    cfg = _config(args)
    out = args.out if args.out is not None else Path(cfg.out_dir) / "report"
    _guard(out / "report.json", args.force)
    test_pool = load_sources(cfg).test
    entries = []
    results: dict[str, EvalResult] = {}
    for run_dir, record in records.items():
        path = _final_checkpoint(run_dir, record)
        try:
            ckpt = load_checkpoint(path)
        except (FormatError, IntegrityError) as err:
            raise ComparisonError(f"{run_dir}: {err}") from None
        if ckpt.checkpoint_id != record["rounds"][-1]["checkpoint"]:
            raise ComparisonError(f"{run_dir}: final checkpoint does not match run_record.json")
        label = record["strategy"]
        result = evaluate(ckpt, test_pool)
        results[label] = result
        X, _ = test_pool.arrays()
        y_pred = predict(ckpt, X) if len(test_pool) else []
        atomic_write_file(out / "predictions" / f"{label}.tsv", _dump_predictions(test_pool, y_pred))
        entries.append(EfficiencyEntry(label, int(record["total_iterations"]), result.top1_accuracy, title_for_label(label)))
    labels = [e.label for e in entries]
    base = args.base or ("naive" if "naive" in labels else labels[0])
    report = build_efficiency_report(entries, base)
    report.confusion = {label: r.confusion.tolist() for label, r in sorted(results.items())}
    report.extra = {"test_samples": len(test_pool), "master_seeds": {r["strategy"]: r["master_seed"] for r in records.values()}}
    _write_report(report, out)
    _print_report(report)
    return 0


def _write_report(report: EfficiencyReport, out: Path) -> None:
    atomic_write_file(out / "report.json", dumps_report(report))
    atomic_write_file(out / "report.csv", dumps_report_csv(report))
    atomic_write_file(out / "report.md", render_report(AccuracyTable.from_report(report), report))
    render_plots(report, out / "plots")
    log.info("wrote report to %s", out)


def _print_report(report: EfficiencyReport) -> None:
    table = Table(title=f"efficiency vs {report.base}")
    for col in ("strategy", "iterations", "top-1 (%)", "saved", "Δ top-1"):
        table.add_column(col, justify="left" if col == "strategy" else "right")
    deltas = {d.label: d for d in report.deltas}
    for e in report.entries:
        d = deltas.get(e.label)
        table.add_row(
            e.title or e.label,
            str(e.total_iterations),
            f"{e.top1 * 100:.2f}",
            "-" if d is None else f"{d.iteration_delta} ({d.percent_savings * 100:.0f}%)",
            "-" if d is None else f"{d.accuracy_delta * 100:+.2f}",
        )
    Console().print(table)


def cmd_report(args: argparse.Namespace) -> int:
    if args.report is None and args.table is None:
        raise ConfigError("give a report.json and/or --table")
    report = load_report(args.report) if args.report is not None else None
    table = load_table(args.table) if args.table is not None else None
    if table is None:
        assert report is not None
        out = args.out if args.out is not None else Path(args.report).parent
        _guard(out / "report.md", args.force)
        _write_report(report, out)
        print(f"wrote report to {out}")
        return 0
    if args.format == "markdown":
        text = render_report(table, report, args.base_row)
    else:
        text = render_table(table, args.format)
    if args.out is None:
        sys.stdout.write(text)
        return 0
    name = {"markdown": "report.md", "csv": "table.csv", "json": "table.json"}[args.format]
    _guard(args.out / name, args.force)
    atomic_write_file(args.out / name, text)
    if report is not None:
        render_plots(report, args.out / "plots", table)
    print(f"wrote {args.out / name}")
    return 0


if __name__ == "__main__":
    main()
