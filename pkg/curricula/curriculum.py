from __future__ import annotations

import json
import logging
import math
import typing as t
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from pathlib import Path

from .dataset import NUM_CLASSES
from .dataset import DomainTag
from .exceptions import ConfigError
from .exceptions import ComparisonError
from .exceptions import DimensionError
from .exceptions import TrainerError
from .sampling import SamplePool
from .sampling import carve_holdout
from .sampling import combine_pools
from .sampling import oversample_balance
from .sampling import save_pool
from .sampling import split_balanced_subset
from .trainer import ModelCheckpoint
from .trainer import ReferenceTrainer
from .trainer import TrainerHandle
from .trainer import iterations_for
from .types import Direction
from .types import FinalRound
from .types import LogLine
from .types import RoundEntry
from .types import RunRecordDict
from .utils import atomic_write_file
from .utils import derive_seed
from .utils import dumps_json


log: logging.Logger = logging.getLogger(__name__)

Source = t.Literal["syn", "real", "combined"]
_SOURCE_NAMES = {"syn": "Syn", "real": "Real"}


@dataclass(frozen=True)
class TrainingProfile:
    name: str
    base_lr: float
    finetune_lr: float
    e1: int
    e2: int
    batch_size: int

    def validate(self) -> None:
        if not 0 < self.finetune_lr < self.base_lr:
            raise ConfigError(
                f"profile {self.name!r}: need 0 < finetune_lr < base_lr "
                f"(got {self.finetune_lr} and {self.base_lr})"
            )
        if self.e1 < 0 or self.e2 < 0:
            raise ConfigError(f"profile {self.name!r}: epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"profile {self.name!r}: batch_size must be >= 1")


PROFILES: dict[str, TrainingProfile] = {
    "slowfast": TrainingProfile("slowfast", 0.1, 0.05, 150, 150, 45),
    "mvitv2": TrainingProfile("mvitv2", 1e-4, 5e-5, 30, 60, 12),
    # sized for the reference trainer on the committed benchmark
    "desk": TrainingProfile("desk", 0.004, 0.0005, 12, 1, 12),
}


@dataclass(frozen=True)
class ConvergencePolicy:
    """
    Early stopping for the final round: evaluate holdout top-1 every `eval_every`
    iterations (default: one epoch), stop after `patience` evaluations without an
    improvement of more than `min_delta`, and never run past `max_epochs`.
    """

    eval_every: int | None = None
    patience: int = 10
    min_delta: float = 1e-4
    max_epochs: int = 100
    holdout_fraction: float = 0.1

    def validate(self) -> None:
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must be in (0, 1)")


@dataclass(frozen=True)
class DatasetSpec:
    source: Source
    fraction: float = 1.0

    def __str__(self) -> str:
        if self.source == "combined":
            return "Combined"
        name = _SOURCE_NAMES[self.source]
        if self.fraction < 1:
            return f"{name}Subset({self.fraction:g})"
        return f"{name}Full"


SynFull = DatasetSpec("syn")
RealFull = DatasetSpec("real")
Combined = DatasetSpec("combined")


def SynSubset(fraction: float) -> DatasetSpec:
    return DatasetSpec("syn", fraction)


@dataclass(frozen=True)
class FixedEpochs:
    epochs: int

    def __str__(self) -> str:
        return f"FixedEpochs({self.epochs})"


@dataclass(frozen=True)
class UntilConvergence:
    policy: ConvergencePolicy = field(default_factory=ConvergencePolicy)

    def __str__(self) -> str:
        p = self.policy
        return (
            f"UntilConvergence(patience={p.patience}, min_delta={p.min_delta:g}, "
            f"max_epochs={p.max_epochs}, eval_every={p.eval_every or 'epoch'}, "
            f"holdout={p.holdout_fraction:g})"
        )


Duration = t.Union[FixedEpochs, UntilConvergence]


@dataclass(frozen=True)
class RoundPlan:
    round_index: int
    dataset: DatasetSpec
    duration: Duration
    learning_rate: float


def _sources(direction: Direction) -> tuple[Source, Source]:
    if direction == "s_to_r":
        return "syn", "real"
    if direction == "r_to_s":
        return "real", "syn"
    raise ConfigError(f"direction must be 's_to_r' or 'r_to_s', got {direction!r}")


@dataclass(frozen=True)
class NaiveCombined:
    """Both sources together, a single round."""

    label: t.ClassVar[str] = "naive"
    title: t.ClassVar[str] = "Real (G) + Synthetic (A)"


@dataclass(frozen=True)
class TwoStepFT:
    """Pre-train on one source, fine-tune on the other at the reduced rate."""

    direction: Direction = "s_to_r"

    @property
    def label(self) -> str:
        return f"two_step_ft-{self.direction}"

    @property
    def title(self) -> str:
        return "Non-Progressive + FT (" + ("S-to-R" if self.direction == "s_to_r" else "R-to-S") + ")"


@dataclass(frozen=True)
class Progressive:
    """
    Expanding subsets of the first source (first_fraction, ..., 1.0), then a
    fine-tune round on the second source. Other round counts than 3 need the
    fractions spelled out.

    final="combined" swaps the fine-tune round for one on both sources
    together, still at the fine-tune learning rate.
    """

    rounds: int = 3
    first_fraction: float = 0.5
    fractions: tuple[float, ...] | None = None
    direction: Direction = "s_to_r"
    final: FinalRound = "real"

    @property
    def label(self) -> str:
        label = "progressive" if self.direction == "s_to_r" else f"progressive-{self.direction}"
        return label + "-combined" if self.final == "combined" else label

    @property
    def title(self) -> str:
        suffix = "" if self.direction == "s_to_r" else " (R-to-S)"
        return ("Progressive + Combined" if self.final == "combined" else "Progressive + FT") + suffix

    def expansion_fractions(self) -> tuple[float, ...]:
        if self.rounds < 2:
            raise ConfigError(f"progressive schedules need at least 2 rounds, got {self.rounds}")
        if self.fractions is None:
            if self.rounds != 3:
                raise ConfigError(
                    f"{self.rounds} progressive rounds need explicit fractions "
                    "(strictly increasing, ending at 1.0)"
                )
            fractions: tuple[float, ...] = (self.first_fraction, 1.0)
        else:
            fractions = tuple(self.fractions)
        if len(fractions) != self.rounds - 1:
            raise ConfigError(
                f"{self.rounds} rounds need {self.rounds - 1} expansion fractions, got {len(fractions)}"
            )
        if fractions[-1] != 1.0:
            raise ConfigError("the last expansion fraction must be 1.0")
        if any(not 0 < f <= 1 for f in fractions):
            raise ConfigError(f"expansion fractions must be in (0, 1], got {fractions}")
        if any(a >= b for a, b in zip(fractions, fractions[1:])):
            raise ConfigError(f"expansion fractions must be strictly increasing, got {fractions}")
        return fractions


@dataclass(frozen=True)
class SingleDomain:
    """Lower-bound baseline: one training source, a single round."""

    domain: DomainTag

    @property
    def label(self) -> str:
        return {DomainTag.SYN_AERIAL: "syn_only", DomainTag.REAL_GROUND: "real_only"}.get(
            self.domain, f"{self.domain}_only"
        )

    @property
    def title(self) -> str:
        return {
            DomainTag.SYN_AERIAL: "Synthetic Only (Aerial)",
            DomainTag.REAL_GROUND: "Real Only (Ground)",
        }.get(self.domain, str(self.domain))


StrategyKind = t.Union[NaiveCombined, TwoStepFT, Progressive, SingleDomain]

STRATEGY_NAMES = ("naive", "two_step_ft", "progressive", "progressive_combined", "syn_only", "real_only")


def parse_strategy(
    name: str,
    direction: Direction | None = None,
    rounds: int | None = None,
    fractions: t.Sequence[float] | None = None,
    final: FinalRound | None = None,
) -> StrategyKind:
    """
    Strategy from its CLI/config name, e.g. 'two_step_ft' with direction 'r_to_s'.
    Labels parse back too: 'progressive-r_to_s-combined'.
    """
    name = name.strip().lower().replace("-", "_")
    if name == "naive":
        return NaiveCombined()
    if name in ("two_step_ft", "two_step"):
        return TwoStepFT(direction or "s_to_r")
    if name.startswith("two_step_ft_") and direction is None:
        return TwoStepFT(name.removeprefix("two_step_ft_"))  # type: ignore[arg-type]
    if name == "progressive" or name.startswith("progressive_"):
        rest = name.removeprefix("progressive").strip("_")
        if rest == "combined" or rest.endswith("_combined"):
            final = final or "combined"
            rest = rest.removesuffix("combined").rstrip("_")
        return Progressive(
            rounds=rounds or 3,
            fractions=tuple(fractions) if fractions else None,
            direction=direction or rest or "s_to_r",  # type: ignore[arg-type]
            final=final or "real",
        )
    if name == "syn_only":
        return SingleDomain(DomainTag.SYN_AERIAL)
    if name == "real_only":
        return SingleDomain(DomainTag.REAL_GROUND)
    raise ConfigError(f"unknown strategy {name!r} (choose from {', '.join(STRATEGY_NAMES)})")


def build_schedule(
    strategy: StrategyKind, profile: TrainingProfile, policy: ConvergencePolicy
) -> list[RoundPlan]:
    """
    Round plans for a strategy. Every schedule ends with exactly one
    UntilConvergence round; curriculum schedules run that last round at the
    fine-tune learning rate.
    """
    profile.validate()
    policy.validate()
    final = UntilConvergence(policy)
    if isinstance(strategy, NaiveCombined):
        plans = [RoundPlan(1, Combined, final, profile.base_lr)]
    elif isinstance(strategy, SingleDomain):
        if strategy.domain == DomainTag.SYN_AERIAL:
            spec = SynFull
        elif strategy.domain == DomainTag.REAL_GROUND:
            spec = RealFull
        else:
            raise ConfigError(f"{strategy.domain} is an evaluation-only domain, it cannot be trained on")
        plans = [RoundPlan(1, spec, final, profile.base_lr)]
    elif isinstance(strategy, TwoStepFT):
        first, second = _sources(strategy.direction)
        plans = [
            RoundPlan(1, DatasetSpec(first), FixedEpochs(profile.e1), profile.base_lr),
            RoundPlan(2, DatasetSpec(second), final, profile.finetune_lr),
        ]
    elif isinstance(strategy, Progressive):
        first, second = _sources(strategy.direction)
        fractions = strategy.expansion_fractions()
        plans = [
            RoundPlan(
                r,
                DatasetSpec(first, frac),
                FixedEpochs(profile.e1 if r == 1 else profile.e2),
                profile.base_lr,
            )
            for r, frac in enumerate(fractions, 1)
        ]
        if strategy.final == "combined":
            last = Combined
        elif strategy.final == "real":
            last = DatasetSpec(second)
        else:
            raise ConfigError(f"final must be 'real' or 'combined', got {strategy.final!r}")
        plans.append(RoundPlan(len(plans) + 1, last, final, profile.finetune_lr))
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    check_schedule(plans)
    return plans


def check_schedule(plans: t.Sequence[RoundPlan]) -> None:
    if not plans:
        raise ConfigError("empty schedule")
    for i, plan in enumerate(plans):
        if plan.round_index != i + 1:
            raise ConfigError(f"round {i + 1} has index {plan.round_index}")
        if isinstance(plan.duration, UntilConvergence) and i != len(plans) - 1:
            raise ConfigError("only the final round may train until convergence")
        if plan.learning_rate <= 0:
            raise ConfigError(f"round {plan.round_index}: learning rate must be positive")


def stage_dataset(
    spec: DatasetSpec,
    syn: SamplePool,
    real: SamplePool,
    target_per_class: int,
    seed: int,
    n_classes: int = NUM_CLASSES,
) -> SamplePool:
    """
    The training pool of one round: subsets are drawn class-balanced first, then
    every source is oversampled to target_per_class; Combined joins the two
    oversampled sources.
    """
    if spec.source == "combined":
        return combine_pools(
            [
                stage_dataset(SynFull, syn, real, target_per_class, derive_seed(seed, 0), n_classes),
                stage_dataset(RealFull, syn, real, target_per_class, derive_seed(seed, 1), n_classes),
            ]
        )
    pool = syn if spec.source == "syn" else real
    if spec.fraction < 1:
        pool, _ = split_balanced_subset(pool, spec.fraction, seed)
    pool = SamplePool(pool.samples, seed, pool.lineage + (f"stage {spec}",))
    return oversample_balance(pool, target_per_class, n_classes)


@dataclass
class RoundResult:
    plan: RoundPlan
    iterations: int
    checkpoint_id: str
    seed: int
    pool_size: int
    target_top1: float | None = None

    def to_dict(self) -> RoundEntry:
        return {
            "round": self.plan.round_index,
            "dataset": str(self.plan.dataset),
            "duration": str(self.plan.duration),
            "learning_rate": self.plan.learning_rate,
            "iterations": self.iterations,
            "checkpoint": self.checkpoint_id,
            "seed": self.seed,
            "pool_size": self.pool_size,
            "target_top1": self.target_top1,
        }


@dataclass
class RunRecord:
    strategy: str
    master_seed: int
    rounds: list[RoundResult] = field(default_factory=list)
    final_checkpoint: ModelCheckpoint | None = field(default=None, repr=False, compare=False)

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.rounds)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.rounds]

    def to_dict(self) -> RunRecordDict:
        return {
            "strategy": self.strategy,
            "master_seed": self.master_seed,
            "rounds": [r.to_dict() for r in self.rounds],
            "total_iterations": self.total_iterations,
            "seeds": self.seeds,
        }

    def dumps(self) -> str:
        return dumps_json(self.to_dict())


def load_run_record(path: Path) -> RunRecordDict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if sum(r["iterations"] for r in data["rounds"]) != data["total_iterations"]:
        raise ComparisonError(f"{path}: total_iterations does not add up")
    return data


def _dumps_log(lines: list[LogLine]) -> str:
    return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)


class _RoundLog:
    # collects the structured per-iteration records of one round
    def __init__(self, round_index: int, per_epoch: int) -> None:
        self.round_index = round_index
        self.per_epoch = max(per_epoch, 1)
        self.lines: list[LogLine] = []

    def __call__(self, _step: int, loss: float) -> None:
        i = len(self.lines) + 1
        self.lines.append(
            {
                "round": self.round_index,
                "epoch": (i - 1) // self.per_epoch + 1,
                "iteration": i,
                "loss": loss,
            }
        )

    def holdout(self, acc: float) -> None:
        if self.lines:
            self.lines[-1]["holdout_acc"] = acc


def _train_until_convergence(
    trainer: TrainerHandle,
    ckpt: ModelCheckpoint,
    pool: SamplePool,
    batch_size: int,
    lr: float,
    policy: ConvergencePolicy,
    seed: int,
    round_log: _RoundLog,
) -> tuple[ModelCheckpoint, int, int]:
    train, holdout = carve_holdout(pool, policy.holdout_fraction, seed)
    if not len(holdout):
        log.warning("holdout is empty (fraction %s of %d samples)", policy.holdout_fraction, len(pool))
    per_epoch = iterations_for(len(train), batch_size, 1)
    round_log.per_epoch = per_epoch
    eval_every = policy.eval_every or per_epoch
    budget = policy.max_epochs * per_epoch
    ckpt = trainer.train_epochs(ckpt, train, batch_size, lr, 0, seed=seed).checkpoint
    best = -math.inf
    stale = done = 0
    while done < budget:
        steps = min(eval_every, budget - done)
        ckpt = trainer.train_steps(ckpt, train, batch_size, lr, steps, on_step=round_log).checkpoint
        done += steps
        acc = trainer.accuracy(ckpt, holdout)
        round_log.holdout(acc)
        if acc > best + policy.min_delta:
            best, stale = acc, 0
        else:
            stale += 1
            if stale >= policy.patience:
                log.info("converged after %d iterations (holdout top-1 %.4f)", done, best)
                break
    else:
        log.info("hit max_epochs=%d (%d iterations)", policy.max_epochs, done)
    return ckpt, done, len(train)


def run_schedule(
    plans: t.Sequence[RoundPlan],
    pools: tuple[SamplePool, SamplePool],
    trainer: TrainerHandle,
    eval_set: SamplePool | None,
    master_seed: int,
    *,
    target_per_class: int,
    batch_size: int,
    strategy: str = "custom",
    init: ModelCheckpoint | None = None,
    run_dir: Path | None = None,
    reset_optimizer: bool = False,
) -> RunRecord:
    """
    Execute the rounds in order. Each round starts from the previous round's
    checkpoint with weights and optimizer moments carried over and only the learning
    rate replaced (reset_optimizer=True zeroes the moments at each round instead).

    With a run_dir, every round leaves round_<r>/{checkpoint.ckpt,pool.pool,log.jsonl}
    behind and run_record.json is rewritten after each round, so a failed run keeps
    its completed rounds.
    """
    check_schedule(plans)
    syn, real = pools
    dims = {p.feature_dim for p in pools if p.feature_dim is not None}
    if len(dims) != 1:
        raise ConfigError(f"training pools need one common feature dimension, got {sorted(dims)}")
    [d] = dims
    ckpt = init if init is not None else trainer.init(d, derive_seed(master_seed, 0))
    record = RunRecord(strategy, master_seed)
    last_durable: Path | None = None
    for plan in plans:
        seed = derive_seed(master_seed, plan.round_index)
        pool = stage_dataset(plan.dataset, syn, real, target_per_class, seed)
        log.info(
            "%s round %d: %s, %s, lr=%g, %d samples",
            strategy, plan.round_index, plan.dataset, plan.duration, plan.learning_rate, len(pool),
        )
        ckpt = ckpt.with_stage(strategy, plan.round_index)
        if reset_optimizer:
            ckpt = replace(ckpt, opt=ckpt.opt.reset())
        round_log = _RoundLog(plan.round_index, iterations_for(len(pool), batch_size, 1))
        try:
            if isinstance(plan.duration, FixedEpochs):
                result = trainer.train_epochs(
                    ckpt, pool, batch_size, plan.learning_rate, plan.duration.epochs,
                    seed=seed, on_step=round_log,
                )
                ckpt, iterations, pool_size = result.checkpoint, result.iterations, len(pool)
            else:
                ckpt, iterations, pool_size = _train_until_convergence(
                    trainer, ckpt, pool, batch_size, plan.learning_rate,
                    plan.duration.policy, seed, round_log,
                )
        except TrainerError as err:
            raise TrainerError(f"round {plan.round_index}: {err}", last_durable) from err
        except DimensionError:
            raise
        except (ValueError, FloatingPointError) as err:
            raise TrainerError(f"round {plan.round_index}: {err}", last_durable) from err
        top1 = trainer.accuracy(ckpt, eval_set) if eval_set is not None and len(eval_set) else None
        record.rounds.append(
            RoundResult(plan, iterations, ckpt.checkpoint_id, seed, pool_size, top1)
        )
        if run_dir is not None:
            round_dir = Path(run_dir) / f"round_{plan.round_index}"
            trainer.save(ckpt, round_dir / "checkpoint.ckpt")
            save_pool(pool, round_dir / "pool.pool")
            atomic_write_file(round_dir / "log.jsonl", _dumps_log(round_log.lines))
            atomic_write_file(Path(run_dir) / "run_record.json", record.dumps())
            last_durable = round_dir / "checkpoint.ckpt"
        log.info("%s round %d done: %d iterations", strategy, plan.round_index, iterations)
    record.final_checkpoint = ckpt
    return record


def run_strategy(
    strategy: StrategyKind,
    profile: TrainingProfile,
    policy: ConvergencePolicy,
    syn: SamplePool,
    real: SamplePool,
    eval_set: SamplePool | None,
    master_seed: int,
    target_per_class: int,
    trainer: TrainerHandle | None = None,
    run_dir: Path | None = None,
    reset_optimizer: bool = False,
) -> RunRecord:
    """build_schedule followed by run_schedule."""
    plans = build_schedule(strategy, profile, policy)
    return run_schedule(
        plans,
        (syn, real),
        trainer if trainer is not None else ReferenceTrainer(),
        eval_set,
        master_seed,
        target_per_class=target_per_class,
        batch_size=profile.batch_size,
        strategy=strategy.label,
        run_dir=run_dir,
        reset_optimizer=reset_optimizer,
    )


def profile_from_dict(data: t.Mapping[str, t.Any] | str) -> TrainingProfile:
    """Preset name, or a mapping of fields optionally starting from `base: <preset>`."""
    if isinstance(data, str):
        try:
            return PROFILES[data]
        except KeyError:
            raise ConfigError(f"unknown profile {data!r} (choose from {', '.join(PROFILES)})") from None
    data = dict(data)
    base = data.pop("base", None)
    fields = asdict(profile_from_dict(base)) if base else {"name": "custom"}
    unknown = set(data) - set(TrainingProfile.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown profile field(s): {', '.join(sorted(unknown))}")
    fields.update(data)
    try:
        profile = TrainingProfile(**fields)
    except TypeError as err:
        raise ConfigError(f"incomplete profile: {err}") from None
    profile.validate()
    return profile


def title_for_label(label: str) -> str:
    """Display name of a strategy label such as 'two_step_ft-r_to_s'."""
    try:
        return parse_strategy(label).title
    except ConfigError:
        return label
