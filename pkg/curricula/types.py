from __future__ import annotations

from typing import Any
from typing import Literal
from typing import TypedDict


HistogramLevel = Literal["clip", "frame"]
"""Granularity of a class histogram: one count per clip, or one per frame"""
Direction = Literal["s_to_r", "r_to_s"]
"""Order of the two training sources in a two-step or progressive curriculum"""
FinalRound = Literal["real", "combined"]
"""What the last progressive round trains on: the second source alone, or both"""
TableFormat = Literal["csv", "json", "markdown"]
Seed = int
"""Unsigned 64-bit seed. All randomness in a run derives from one of these"""


class LogLine(TypedDict, total=False):
    """One line of a round's log.jsonl

    holdout_acc is only present on iterations where the holdout was evaluated.
    """

    round: int
    epoch: int
    iteration: int
    loss: float
    holdout_acc: float


class RoundEntry(TypedDict):
    """Per-round section of run_record.json"""

    round: int
    dataset: str
    duration: str
    learning_rate: float
    iterations: int
    checkpoint: str
    seed: Seed
    pool_size: int
    target_top1: float | None


class RunRecordDict(TypedDict):
    """Serialized form of a curriculum.RunRecord"""

    strategy: str
    master_seed: Seed
    rounds: list[RoundEntry]
    total_iterations: int
    seeds: list[Seed]


class ReportEntry(TypedDict):
    label: str
    total_iterations: int
    top1: float


class ReportDelta(TypedDict):
    """Comparison of one entry against the base entry of an efficiency report"""

    label: str
    base: str
    iteration_delta: int
    percent_savings: float
    accuracy_delta: float


class ReportDict(TypedDict):
    base: str
    entries: list[ReportEntry]
    deltas: list[ReportDelta]
    confusion: dict[str, list[list[int]]]
    extra: dict[str, Any]
