from __future__ import annotations

import logging
import math
import typing as t
from collections import Counter
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .clips import TrainingSample
from .dataset import NUM_CLASSES
from .exceptions import DimensionError
from .exceptions import ParseError
from .utils import atomic_write_file


log: logging.Logger = logging.getLogger(__name__)

POOL_HEADER = "#pool v1"

SampleKey = tuple[str, int]


@dataclass(frozen=True)
class SamplePool:
    samples: tuple[TrainingSample, ...] = ()
    seed: int = 0
    lineage: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "lineage", tuple(self.lineage))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> t.Iterator[TrainingSample]:
        return iter(self.samples)

    def class_counts(self, n_classes: int = NUM_CLASSES) -> dict[int, int]:
        counts = dict.fromkeys(range(n_classes), 0)
        counts.update(Counter(s.label for s in self.samples))
        return dict(sorted(counts.items()))

    def keys(self) -> list[SampleKey]:
        return [s.key for s in self.samples]

    def identities(self) -> set[SampleKey]:
        return {s.key for s in self.samples}

    def multiplicities(self) -> Counter:
        return Counter(s.key for s in self.samples)

    @property
    def feature_dim(self) -> int | None:
        for s in self.samples:
            if s.features is not None:
                return int(s.features.shape[0])
        return None

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Feature matrix (n, d) and label vector (n,) in pool order."""
        if not self.samples:
            return np.empty((0, 0)), np.empty(0, dtype=np.int64)
        X = np.stack([s.features for s in self.samples]).astype(np.float64, copy=False)
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return X, y


def _by_class(samples: t.Iterable[TrainingSample]) -> dict[int, list[TrainingSample]]:
    groups: dict[int, list[TrainingSample]] = {}
    for s in samples:
        groups.setdefault(s.label, []).append(s)
    return dict(sorted(groups.items()))


def oversample_balance(
    pool: SamplePool,
    target_per_class: int,
    n_classes: int = NUM_CLASSES,
) -> SamplePool:
    """
    Duplicate samples of every under-target class until it has exactly
    target_per_class members. Copies are taken round-robin over a seeded shuffle of
    the class, so multiplicities within a class differ by at most one. Classes at or
    above target are left alone (no down-sampling); empty classes stay empty and are
    reported in the lineage.
    """
    rng = np.random.default_rng(pool.seed)
    extras: list[TrainingSample] = []
    notes = []
    groups = _by_class(pool.samples)
    for label in range(n_classes):
        members = groups.get(label, [])
        n = len(members)
        if n == 0:
            log.warning("class %d has no samples, cannot oversample it", label)
            notes.append(f"warning: class {label} empty")
            continue
        if n >= target_per_class:
            continue
        order = rng.permutation(n)
        need = target_per_class - n
        extras.extend(members[order[i % n]] for i in range(need))
    entry = f"oversample_balance(target={target_per_class}, seed={pool.seed})"
    if notes:
        entry += " [" + "; ".join(notes) + "]"
    log.debug("%s added %d copies", entry, len(extras))
    return SamplePool(pool.samples + tuple(extras), pool.seed, pool.lineage + (entry,))


def _rounded_quotas(sizes: dict[int, int], fraction: Fraction) -> dict[int, int]:
    # cumulative rounding in ascending class id: every quota is the floor or the ceil
    # of fraction * n_c, and the total stays within 1/2 of fraction * |pool|
    quotas = {}
    cum = Fraction(0)
    taken = 0
    for label, n in sorted(sizes.items()):
        cum += fraction * n
        upto = math.floor(cum + Fraction(1, 2))
        quotas[label] = upto - taken
        taken = upto
    return quotas


def split_balanced_subset(
    pool: SamplePool, fraction: float, seed: int
) -> tuple[SamplePool, SamplePool]:
    """
    Class-balanced random split. Works on distinct sample identities: all copies of
    an identity land on the same side, so the two parts never share a sample.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if not pool.samples:
        raise ValueError("cannot split an empty pool")
    frac = Fraction(str(fraction))
    rng = np.random.default_rng(seed)
    distinct: dict[int, list[SampleKey]] = {}
    for key, label in {s.key: s.label for s in pool.samples}.items():
        distinct.setdefault(label, []).append(key)
    quotas = _rounded_quotas({c: len(keys) for c, keys in distinct.items()}, frac)
    chosen: set[SampleKey] = set()
    for label, keys in sorted(distinct.items()):
        picks = rng.permutation(len(keys))[: quotas[label]]
        chosen.update(keys[i] for i in picks)
    subset = tuple(s for s in pool.samples if s.key in chosen)
    remainder = tuple(s for s in pool.samples if s.key not in chosen)
    entry = f"split_balanced_subset(fraction={fraction}, seed={seed})"
    log.debug("%s -> %d / %d", entry, len(subset), len(remainder))
    return (
        SamplePool(subset, seed, pool.lineage + (entry + ":subset",)),
        SamplePool(remainder, seed, pool.lineage + (entry + ":remainder",)),
    )


def carve_holdout(
    pool: SamplePool, fraction: float, seed: int
) -> tuple[SamplePool, SamplePool]:
    """
    (train, holdout) for a convergence round. The holdout is class-balanced, holds
    each identity once, and none of its identities remain in the training part.
    """
    holdout, train = split_balanced_subset(pool, fraction, seed)
    seen: set[SampleKey] = set()
    unique = []
    for s in holdout.samples:
        if s.key not in seen:
            seen.add(s.key)
            unique.append(s)
    return train, SamplePool(unique, seed, holdout.lineage + ("dedupe",))


def combine_pools(pools: t.Sequence[SamplePool]) -> SamplePool:
    """Multiset union in pool order; all pools must share one feature dimension."""
    if not pools:
        return SamplePool()
    dims = {p.feature_dim for p in pools if p.feature_dim is not None}
    if len(dims) > 1:
        raise DimensionError(f"cannot combine pools with feature dims {sorted(dims)}")
    if len(pools) == 1:
        return pools[0]
    samples = tuple(s for p in pools for s in p.samples)
    lineage = tuple(e for p in pools for e in p.lineage)
    entry = f"combine_pools({' + '.join(str(len(p)) for p in pools)})"
    return SamplePool(samples, pools[0].seed, lineage + (entry,))


def dumps_pool(pool: SamplePool) -> str:
    lines = [f"{POOL_HEADER} seed={pool.seed}"]
    lines.extend(f"#lineage {entry}" for entry in pool.lineage)
    counts = pool.multiplicities()
    written = set()
    for s in pool.samples:
        if s.key in written:
            continue
        written.add(s.key)
        lines.append(f"{s.clip_id}\t{s.start_frame}\t{s.label}\t{counts[s.key]}")
    return "\n".join(lines) + "\n"


def save_pool(pool: SamplePool, path: Path) -> None:
    atomic_write_file(Path(path), dumps_pool(pool))


def load_pool(
    path: Path, samples: t.Mapping[SampleKey, TrainingSample] | t.Iterable[TrainingSample]
) -> SamplePool:
    """
    Read a pool file back, taking features etc. from `samples` (a key -> sample map
    or an iterable of samples, e.g. the output of build_sample_set). Copies of an
    identity come back next to each other.
    """
    path = Path(path)
    if not isinstance(samples, t.Mapping):
        samples = {s.key: s for s in samples}
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(POOL_HEADER):
        raise ParseError(f"missing {POOL_HEADER!r} header", path, 1)
    seed = 0
    for kv in lines[0][len(POOL_HEADER):].split():
        k, _, v = kv.partition("=")
        if k == "seed":
            seed = int(v)
    lineage = []
    out: list[TrainingSample] = []
    for lineno, line in enumerate(lines[1:], 2):
        if line.startswith("#lineage "):
            lineage.append(line[len("#lineage "):])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", path, lineno)
        try:
            key = fields[0], int(fields[1])
            label, mult = int(fields[2]), int(fields[3])
        except ValueError:
            raise ParseError(f"bad pool line {line!r}", path, lineno) from None
        try:
            sample = samples[key]
        except KeyError:
            raise ParseError(f"unknown sample {key[0]}@{key[1]}", path, lineno) from None
        if sample.label != label:
            raise ParseError(f"label mismatch for {key[0]}@{key[1]}", path, lineno)
        out.extend([sample] * mult)
    return SamplePool(out, seed, lineage)
