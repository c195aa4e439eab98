from __future__ import annotations

import concurrent.futures
import itertools
import logging
import shutil
import sys
import time
import typing as t
from dataclasses import dataclass
from dataclasses import replace
from pathlib import Path

import pebble

from .benchgen import load_bundle
from .clips import FeatureSource
from .clips import SidecarFeatureSource
from .clips import SyntheticFeatureSource
from .clips import build_sample_set
from .config import RunConfig
from .curriculum import StrategyKind
from .curriculum import run_strategy
from .dataset import DatasetManifest
from .dataset import filter_subjects
from .dataset import load_manifest
from .dataset import load_registry
from .dataset import select_subjects
from .exceptions import ConfigError
from .exceptions import CurriculaError
from .sampling import SamplePool
from .utils import atomic_write_file
from .utils import colored


DEFAULT_TIMEOUT: float = 600.0
log: logging.Logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sources:
    syn: SamplePool
    real: SamplePool
    test: SamplePool


def _feature_source(cfg: RunConfig) -> FeatureSource:
    if cfg.data.features is not None:
        return SidecarFeatureSource(cfg.data.features)
    assert cfg.data.synthetic_features is not None
    return SyntheticFeatureSource(cfg.data.synthetic_features, cfg.master_seed)


def load_manifests(cfg: RunConfig) -> dict[str, DatasetManifest]:
    """Training manifests without excluded/test subjects, and the test manifest."""
    data = cfg.data
    registry = load_registry(data.registry) if data.registry is not None else None
    held_out = set(data.exclude_subjects) | set(data.test_subjects)
    manifests = {}
    for name, path in (("syn", data.syn_manifest), ("real", data.real_manifest)):
        assert path is not None
        manifests[name] = filter_subjects(load_manifest(path, registry), held_out)
    assert data.test_manifest is not None
    test = load_manifest(data.test_manifest, registry)
    if data.test_subjects:
        test = select_subjects(test, data.test_subjects)
    manifests["test"] = test
    return manifests


def load_sources(cfg: RunConfig) -> Sources:
    """The two training sources and the target test pool named by the config's data section."""
    cfg.data.validate()
    if cfg.data.bundle is not None:
        bundle = load_bundle(cfg.data.bundle)
        return Sources(bundle.syn_pool, bundle.real_ground_pool, bundle.target_test_pool)
    source = _feature_source(cfg)
    pools = {}
    for name, manifest in load_manifests(cfg).items():
        samples = build_sample_set(manifest, cfg.windowing, source)
        pools[name] = SamplePool(samples, cfg.master_seed, (f"windowed {name} ({manifest.provenance or 'manifest'})",))
    return Sources(pools["syn"], pools["real"], pools["test"])


def prepare_run_dir(run_dir: Path, force: bool = False) -> Path:
    run_dir = Path(run_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        if not force:
            raise ConfigError(f"{run_dir} already exists (use --force to overwrite)")
        log.info("removing previous outputs in %s", run_dir)
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def execute_run(cfg: RunConfig, strategy: StrategyKind, run_dir: Path) -> dict[str, t.Any]:
    """
    One strategy, start to finish: archive the effective config, train, and write
    the run directory. Errors are returned rather than raised, so that they make it
    back from a worker process intact.
    """
    try:
        atomic_write_file(Path(run_dir) / "config.yaml", replace(cfg, strategies=(strategy,)).dumps())
        sources = load_sources(cfg)
        record = run_strategy(
            strategy,
            cfg.profile,
            cfg.convergence,
            sources.syn,
            sources.real,
            sources.test,
            cfg.master_seed,
            cfg.target_per_class,
            trainer=cfg.trainer.build(),
            run_dir=run_dir,
            reset_optimizer=cfg.reset_optimizer,
        )
    except CurriculaError as err:
        return {"label": strategy.label, "error": str(err), "exit_code": err.exit_code}
    except OSError as err:
        return {"label": strategy.label, "error": str(err), "exit_code": 2}
    top1 = record.rounds[-1].target_top1
    return {
        "label": strategy.label,
        "total_iterations": record.total_iterations,
        "top1": top1,
        "error": "",
        "exit_code": 0,
    }


def format_time(t: float, timeout: float = DEFAULT_TIMEOUT) -> str:
    """
    Used for rendering the run time in color:
    - green, if under a quarter of the timeout
    - yellow, if over a quarter but under a half
    - red, if slower than that
    """
    if t < timeout / 4:
        color = "green"
    elif t < timeout / 2:
        color = "yellow"
    else:
        color = "red"
    return colored(f"{t: 7.2f}s", color)


def _result_line(result: dict[str, t.Any], walltime: float, timeout: float) -> str:
    line = "   ".join([format_time(walltime, timeout), f"{result['label']:<24}"])
    if result["error"]:
        return line + "   " + colored("✖", "red") + " " + result["error"]
    top1 = result["top1"]
    acc = "-" if top1 is None else f"{top1 * 100:.2f}%"
    return line + f"   {result['total_iterations']:>8} iterations   top-1 {acc}   " + colored("✔", "green")


def run_strategies(
    cfg: RunConfig,
    strategies: t.Sequence[StrategyKind],
    out_dir: Path,
    jobs: int = 1,
    force: bool = False,
    dt: float = 0.1,
) -> int:
    """
    Run every strategy into out_dir/<label>. With jobs > 1, or with a timeout, each
    run goes to its own worker process and a spinner shows progress on stderr.
    Returns the worst exit code seen.
    """
    timeout = cfg.timeout
    run_dirs = {s.label: prepare_run_dir(Path(out_dir) / s.label, force) for s in strategies}
    shown_timeout = timeout or DEFAULT_TIMEOUT
    rc = 0
    if jobs <= 1 and timeout is None:
        for strategy in strategies:
            t0 = time.time()
            result = execute_run(cfg, strategy, run_dirs[strategy.label])
            print(_result_line(result, time.time() - t0, shown_timeout))
            rc = max(rc, result["exit_code"])
        return rc
    spinner = itertools.cycle(r"\|/-")
    t0 = time.time()
    with pebble.ProcessPool(max_workers=max(jobs, 1)) as pool:
        futures = {
            s.label: pool.schedule(execute_run, args=(cfg, s, run_dirs[s.label]), timeout=timeout)
            for s in strategies
        }
        line = ""
        while not all(f.done() for f in futures.values()):
            running = [label for label, f in futures.items() if not f.done()]
            line = "\r" + format_time(time.time() - t0, shown_timeout) + "   " + ", ".join(running) + "   " + next(spinner)
            sys.stderr.write(line)
            sys.stderr.flush()
            time.sleep(dt)
        if line:
            sys.stderr.write("\r" + " " * len(line) + "\r")
            sys.stderr.flush()
        walltime = time.time() - t0
        for label, future in futures.items():
            try:
                result = future.result()
            except (TimeoutError, concurrent.futures.TimeoutError):
                result = {"label": label, "error": f"timed out after {timeout}s", "exit_code": 3}
            except Exception as err:
                result = {"label": label, "error": repr(err)[:100], "exit_code": 3}
            print(_result_line(result, walltime, shown_timeout))
            rc = max(rc, result["exit_code"])
    return rc
