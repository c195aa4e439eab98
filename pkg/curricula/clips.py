"""
Turns frame-labelled clips into fixed-length training samples: windowing, the
majority-label retention filter, uniform frame subsampling, and feature lookup.
"""
from __future__ import annotations

import logging
import math
import typing as t
import zlib
from collections import Counter
from dataclasses import dataclass
from dataclasses import replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dataset import ClipRecord
from .dataset import DatasetManifest
from .dataset import majority_label
from .exceptions import ConfigError
from .exceptions import FeatureError
from .exceptions import ParseError
from .utils import atomic_write_file
from .utils import rng_for


log: logging.Logger = logging.getLogger(__name__)

FEATURES_HEADER = "#features v1"
FEATURE_SUFFIX = ".feat"


@dataclass(frozen=True)
class WindowingConfig:
    window_len: int = 64
    stride: int = 64
    retain_fraction: float = 0.8
    subsample_count: int = 16
    subsample_step: int = 4

    def validate(self) -> None:
        if self.window_len < 1:
            raise ConfigError(f"window_len must be >= 1, got {self.window_len}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not 0 < self.retain_fraction <= 1:
            raise ConfigError(f"retain_fraction must be in (0, 1], got {self.retain_fraction}")
        if self.subsample_count < 1 or self.subsample_step < 1:
            raise ConfigError("subsample_count and subsample_step must be >= 1")
        if self.subsample_count * self.subsample_step > self.window_len:
            raise ConfigError(
                f"{self.subsample_count} frames every {self.subsample_step} "
                f"do not fit in a {self.window_len}-frame window"
            )

    @property
    def threshold(self) -> int:
        """Minimum majority-label frame count for a window to be retained."""
        # decimal text -> exact rational, so 0.8 * 64 is 51.2 and not 51.20000000000001
        exact = Fraction(str(self.retain_fraction)) * self.window_len
        return math.ceil(exact)

    def frame_offsets(self) -> tuple[int, ...]:
        return tuple(k * self.subsample_step for k in range(self.subsample_count))


@dataclass(frozen=True)
class TrainingSample:
    clip_id: str
    start_frame: int
    frame_indices: tuple[int, ...]
    label: int
    features: np.ndarray | None = None

    @property
    def key(self) -> tuple[str, int]:
        """Sample identity. Oversampled copies share it."""
        return self.clip_id, self.start_frame

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrainingSample):
            return NotImplemented
        if self.key != other.key or self.label != other.label:
            return False
        if self.frame_indices != other.frame_indices:
            return False
        if self.features is None or other.features is None:
            return self.features is other.features
        return bool(np.array_equal(self.features, other.features))

    def __hash__(self) -> int:
        return hash((self.key, self.label))


def segment_clip(clip: ClipRecord, cfg: WindowingConfig) -> list[TrainingSample]:
    """
    Cut a clip into windows starting at 0, stride, 2*stride, ... A trailing partial
    window is dropped. A window is kept iff its most frequent label covers at least
    ceil(retain_fraction * window_len) frames, and then carries that label.
    """
    cfg.validate()
    threshold = cfg.threshold
    offsets = cfg.frame_offsets()
    labels = clip.frame_labels
    samples = []
    for start in range(0, clip.n_frames - cfg.window_len + 1, cfg.stride):
        window = labels[start : start + cfg.window_len]
        label, count = majority_label(window)
        if count < threshold:
            log.debug(
                "drop %s@%d: majority %d has %d/%d frames",
                clip.clip_id, start, label, count, cfg.window_len,
            )
            continue
        samples.append(
            TrainingSample(
                clip_id=clip.clip_id,
                start_frame=start,
                frame_indices=tuple(start + k for k in offsets),
                label=label,
            )
        )
    return samples


class FeatureSource(t.Protocol):
    """Anything that can produce a feature vector for a window of a clip."""

    def features_for(self, clip: ClipRecord, sample: TrainingSample) -> np.ndarray:
        ...


def reduce_frames(frames: np.ndarray, sample: TrainingSample) -> np.ndarray:
    """Sample feature = mean of its selected frame rows."""
    last = sample.frame_indices[-1]
    if frames.ndim != 2 or last >= frames.shape[0]:
        msg = f"feature file has {frames.shape[0]} frames, need index {last}"
        raise FeatureError(msg, sample.clip_id, sample.start_frame)
    return frames[list(sample.frame_indices)].mean(axis=0)


class MemoryFeatureSource:
    """Per-clip frame matrices held in memory."""

    def __init__(self, frames: t.Mapping[str, np.ndarray]) -> None:
        self.frames = dict(frames)

    def features_for(self, clip: ClipRecord, sample: TrainingSample) -> np.ndarray:
        try:
            rows = self.frames[clip.clip_id]
        except KeyError:
            raise FeatureError("no frames", clip.clip_id, sample.start_frame) from None
        return reduce_frames(np.asarray(rows, dtype=np.float64), sample)


class SyntheticFeatureSource:
    """
    Seeded random frames, keyed by a stable checksum of the clip id so that a clip
    always gets the same features no matter which manifest or process asks.
    """

    def __init__(self, dim: int, seed: int = 0) -> None:
        if dim < 1:
            raise ConfigError(f"feature dimension must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed

    def frames_for(self, clip: ClipRecord) -> np.ndarray:
        rng = rng_for(self.seed, zlib.crc32(clip.clip_id.encode()))
        return rng.standard_normal((clip.n_frames, self.dim))

    def features_for(self, clip: ClipRecord, sample: TrainingSample) -> np.ndarray:
        return reduce_frames(self.frames_for(clip), sample)


class SidecarFeatureSource:
    """
    Loads `<directory>/<clip_id>.feat` (or the clip's own feature_path, relative to
    the directory) in the sidecar format:

        #features v1 d=<dim> frames=<n>
        n lines of d space-separated decimals
    """

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self._load = lru_cache(maxsize=256)(self._read)

    def path_for(self, clip: ClipRecord) -> Path:
        if clip.feature_path:
            return self.directory / clip.feature_path
        return self.directory / f"{clip.clip_id}{FEATURE_SUFFIX}"

    def _read(self, path: Path, clip_id: str) -> np.ndarray:
        try:
            return read_feature_sidecar(path)
        except FileNotFoundError:
            raise FeatureError(f"missing feature file {path}", clip_id) from None
        except ParseError as err:
            raise FeatureError(str(err), clip_id) from None

    def features_for(self, clip: ClipRecord, sample: TrainingSample) -> np.ndarray:
        frames = self._load(self.path_for(clip), clip.clip_id)
        return reduce_frames(frames, sample)


def read_feature_sidecar(path: Path) -> np.ndarray:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(FEATURES_HEADER):
        raise ParseError(f"missing {FEATURES_HEADER!r} header", path, 1)
    try:
        meta = dict(kv.split("=", 1) for kv in lines[0][len(FEATURES_HEADER):].split())
        dim, n = int(meta["d"]), int(meta["frames"])
    except (KeyError, ValueError):
        raise ParseError(f"bad header {lines[0]!r}", path, 1) from None
    rows = lines[1:]
    if len(rows) != n:
        raise ParseError(f"header says {n} frames, file has {len(rows)}", path, len(lines))
    frames = np.empty((n, dim), dtype=np.float64)
    for i, row in enumerate(rows):
        values = row.split()
        if len(values) != dim:
            raise ParseError(f"expected {dim} values, got {len(values)}", path, i + 2)
        try:
            frames[i] = [float(v) for v in values]
        except ValueError:
            raise ParseError(f"non-numeric value in {row!r}", path, i + 2) from None
    return frames


def write_feature_sidecar(path: Path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    n, dim = frames.shape
    lines = [f"{FEATURES_HEADER} d={dim} frames={n}"]
    # repr of a python float round-trips exactly
    lines.extend(" ".join(repr(float(v)) for v in row) for row in frames)
    atomic_write_file(Path(path), "\n".join(lines) + "\n")


def build_sample_set(
    manifest: DatasetManifest,
    cfg: WindowingConfig,
    feature_source: FeatureSource,
) -> list[TrainingSample]:
    """
    segment_clip over every record in clip_id order, with features attached. All
    feature vectors must have the same length.
    """
    cfg.validate()
    samples = []
    dim = None
    for clip in sorted(manifest.records, key=lambda r: r.clip_id):
        for sample in segment_clip(clip, cfg):
            vec = np.asarray(feature_source.features_for(clip, sample), dtype=np.float64)
            if vec.ndim != 1:
                raise FeatureError("feature vector is not 1-d", clip.clip_id, sample.start_frame)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                msg = f"feature length {vec.shape[0]} != {dim}"
                raise FeatureError(msg, clip.clip_id, sample.start_frame)
            if not np.all(np.isfinite(vec)):
                raise FeatureError("non-finite feature value", clip.clip_id, sample.start_frame)
            vec.setflags(write=False)
            samples.append(replace(sample, features=vec))
    log.info("built %d samples from %d clips", len(samples), len(manifest))
    return samples


def window_report(manifest: DatasetManifest, cfg: WindowingConfig) -> dict[str, dict[str, int]]:
    """Windows examined vs. retained, per domain. Clip counts are reported separately."""
    cfg.validate()
    report: dict[str, Counter] = {}
    for clip in manifest.records:
        stats = report.setdefault(str(clip.domain), Counter())
        stats["clips"] += 1
        stats["windows"] += max(0, (clip.n_frames - cfg.window_len) // cfg.stride + 1)
        stats["retained"] += len(segment_clip(clip, cfg))
    return {domain: dict(sorted(c.items())) for domain, c in sorted(report.items())}
