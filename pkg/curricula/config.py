"""
Run configuration: one YAML file with nested sections, plus CLI overrides.

    profile: desk                 # or a mapping, optionally `base: <preset>`
    strategies: [naive, two_step_ft, progressive]
    windowing: {window_len: 64, stride: 64, retain_fraction: 0.8}
    target_per_class: 30
    convergence: {patience: 5, max_epochs: 30}
    trainer: {architecture: linear, weight_decay: 0.01}
    data:
      bundle: bench/              # an emitted benchmark, or:
      syn_manifest: syn.manifest
      real_manifest: real.manifest
      test_manifest: test.manifest
      features: features/
      exclude_subjects: [s17, s18]
    out_dir: runs
    master_seed: 0
    timeout: 600

Relative paths are taken relative to the directory of the config file.
"""
from __future__ import annotations

import logging
import typing as t
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from dataclasses import replace
from pathlib import Path

import yaml

from .clips import WindowingConfig
from .curriculum import PROFILES
from .curriculum import ConvergencePolicy
from .curriculum import NaiveCombined
from .curriculum import Progressive
from .curriculum import SingleDomain
from .curriculum import StrategyKind
from .curriculum import TrainingProfile
from .curriculum import TwoStepFT
from .curriculum import parse_strategy
from .curriculum import profile_from_dict
from .exceptions import ConfigError
from .trainer import Architecture
from .trainer import ReferenceTrainer


log: logging.Logger = logging.getLogger(__name__)

SECTIONS = (
    "profile",
    "strategies",
    "windowing",
    "target_per_class",
    "convergence",
    "trainer",
    "data",
    "out_dir",
    "master_seed",
    "timeout",
    "reset_optimizer",
)


@dataclass(frozen=True)
class DataConfig:
    bundle: Path | None = None
    syn_manifest: Path | None = None
    real_manifest: Path | None = None
    test_manifest: Path | None = None
    features: Path | None = None
    registry: Path | None = None
    synthetic_features: int | None = None  # feature dim of seeded random features
    exclude_subjects: tuple[str, ...] = ()
    test_subjects: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.bundle is not None:
            return
        missing = [
            name
            for name in ("syn_manifest", "real_manifest", "test_manifest")
            if getattr(self, name) is None
        ]
        if missing:
            raise ConfigError(f"data: set `bundle` or all of {', '.join(missing)}")
        if self.features is None and self.synthetic_features is None:
            raise ConfigError("data: set `features` (sidecar directory) or `synthetic_features` (dim)")


@dataclass(frozen=True)
class TrainerConfig:
    architecture: str = "linear"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def build(self) -> ReferenceTrainer:
        return ReferenceTrainer(
            Architecture.parse(self.architecture),
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class RunConfig:
    profile: TrainingProfile = PROFILES["desk"]
    strategies: tuple[StrategyKind, ...] = (NaiveCombined(), TwoStepFT(), Progressive())
    windowing: WindowingConfig = WindowingConfig()
    target_per_class: int = 30
    convergence: ConvergencePolicy = ConvergencePolicy()
    trainer: TrainerConfig = TrainerConfig()
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: Path = Path("runs")
    master_seed: int = 0
    timeout: float | None = None
    reset_optimizer: bool = False

    def validate(self) -> None:
        self.profile.validate()
        self.windowing.validate()
        self.convergence.validate()
        self.data.validate()
        try:
            Architecture.parse(self.trainer.architecture)
        except ValueError as err:
            raise ConfigError(f"trainer: {err}") from None
        if self.target_per_class < 1:
            raise ConfigError(f"target_per_class must be >= 1, got {self.target_per_class}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if not self.strategies:
            raise ConfigError("no strategies configured")
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate strategies: {', '.join(labels)}")

    def to_dict(self) -> dict[str, t.Any]:
        data = {k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(self.data).items()}
        data["exclude_subjects"] = list(self.data.exclude_subjects)
        data["test_subjects"] = list(self.data.test_subjects)
        return {
            "profile": asdict(self.profile),
            "strategies": [strategy_to_dict(s) for s in self.strategies],
            "windowing": asdict(self.windowing),
            "target_per_class": self.target_per_class,
            "convergence": asdict(self.convergence),
            "trainer": asdict(self.trainer),
            "data": {k: v for k, v in data.items() if v not in (None, [])},
            "out_dir": str(self.out_dir),
            "master_seed": self.master_seed,
            "timeout": self.timeout,
            "reset_optimizer": self.reset_optimizer,
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def strategy_to_dict(strategy: StrategyKind) -> dict[str, t.Any] | str:
    if isinstance(strategy, NaiveCombined):
        return "naive"
    if isinstance(strategy, SingleDomain):
        return strategy.label
    if isinstance(strategy, TwoStepFT):
        return {"name": "two_step_ft", "direction": strategy.direction}
    result: dict[str, t.Any] = {
        "name": "progressive",
        "rounds": strategy.rounds,
        "direction": strategy.direction,
    }
    if strategy.final != "real":
        result["final"] = strategy.final
    if strategy.fractions is not None:
        result["fractions"] = list(strategy.fractions)
    elif strategy.first_fraction != 0.5:
        result["first_fraction"] = strategy.first_fraction
    return result


def strategy_from_config(item: str | t.Mapping[str, t.Any]) -> StrategyKind:
    if isinstance(item, str):
        return parse_strategy(item)
    if not isinstance(item, t.Mapping) or "name" not in item:
        raise ConfigError(f"strategy entries are names or mappings with a `name`, got {item!r}")
    options = dict(item)
    name = options.pop("name")
    first_fraction = options.pop("first_fraction", None)
    unknown = set(options) - {"direction", "rounds", "fractions", "final"}
    if unknown:
        raise ConfigError(f"unknown strategy option(s): {', '.join(sorted(unknown))}")
    strategy = parse_strategy(
        name, options.get("direction"), options.get("rounds"), options.get("fractions"), options.get("final")
    )
    if options.get("final") is not None and not isinstance(strategy, Progressive):
        raise ConfigError("final only applies to progressive schedules")
    if first_fraction is not None:
        if not isinstance(strategy, Progressive):
            raise ConfigError("first_fraction only applies to progressive schedules")
        strategy = replace(strategy, first_fraction=float(first_fraction))
    return strategy


def _section(cls: type, data: t.Any, name: str) -> t.Any:
    if data is None:
        return cls()
    if not isinstance(data, t.Mapping):
        raise ConfigError(f"{name}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as err:
        raise ConfigError(f"{name}: {err}") from None


def _resolve(base: Path, value: t.Any) -> Path | None:
    if value is None:
        return None
    path = Path(value).expanduser()
    return (path if path.is_absolute() else base / path).resolve()


def config_from_dict(data: t.Mapping[str, t.Any], base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    defaults = RunConfig()
    kwargs: dict[str, t.Any] = {}
    if "profile" in data:
        kwargs["profile"] = profile_from_dict(data["profile"])
    if "strategies" in data:
        items = data["strategies"]
        if isinstance(items, str):
            items = [items]
        kwargs["strategies"] = tuple(strategy_from_config(s) for s in items)
    kwargs["windowing"] = _section(WindowingConfig, data.get("windowing"), "windowing")
    kwargs["convergence"] = _section(ConvergencePolicy, data.get("convergence"), "convergence")
    kwargs["trainer"] = _section(TrainerConfig, data.get("trainer"), "trainer")
    raw = dict(data.get("data") or {})
    for key in ("bundle", "syn_manifest", "real_manifest", "test_manifest", "features", "registry"):
        if key in raw:
            raw[key] = _resolve(base_dir, raw[key])
    for key in ("exclude_subjects", "test_subjects"):
        if key in raw:
            raw[key] = tuple(str(s) for s in raw[key])
    kwargs["data"] = _section(DataConfig, raw, "data")
    if "out_dir" in data:
        kwargs["out_dir"] = _resolve(base_dir, data["out_dir"])
    for key, cast in (("target_per_class", int), ("master_seed", int), ("reset_optimizer", bool)):
        if key in data:
            kwargs[key] = cast(data[key])
    if data.get("timeout") is not None:
        kwargs["timeout"] = float(data["timeout"])
    return replace(defaults, **kwargs)


def load_config(path: Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from None
    if not isinstance(data, t.Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    log.debug("loaded config from %s", path)
    return config_from_dict(data, path.parent)
