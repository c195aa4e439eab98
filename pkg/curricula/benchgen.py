"""
Seeded three-domain feature benchmark.

Every class gets a mean vector. The held-out target domain is the means plus
Gaussian noise. The "real ground" source sees the same classes under a rotation
in the (0, 1) plane of feature space, i.e. a viewpoint shift with realistic
noise. The "synthetic aerial" source is viewpoint aligned but every class is
pushed off its mean by a fixed per-class bias and gets inflated noise, i.e. a
realism gap. Each sample is emitted as a constant-label clip whose frames all
carry the sample's vector, so the regular windowing pipeline turns the bundle
back into exactly the same pools.
"""
from __future__ import annotations

import json
import logging
import math
import typing as t
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .clips import MemoryFeatureSource
from .clips import SidecarFeatureSource
from .clips import TrainingSample
from .clips import WindowingConfig
from .clips import build_sample_set
from .clips import write_feature_sidecar
from .dataset import ACTION_CLASSES
from .dataset import NUM_CLASSES
from .dataset import ClipRecord
from .dataset import DatasetManifest
from .dataset import DomainTag
from .dataset import load_manifest
from .dataset import save_manifest
from .dataset import save_registry
from .exceptions import SpecError
from .sampling import SamplePool
from .sampling import load_pool
from .sampling import save_pool
from .utils import atomic_write_file
from .utils import dumps_json
from .utils import rng_for

if t.TYPE_CHECKING:
    from .curriculum import ConvergencePolicy
    from .curriculum import StrategyKind
    from .curriculum import TrainingProfile
    from .trainer import TrainerHandle


log: logging.Logger = logging.getLogger(__name__)

MAX_MEAN_RETRIES = 1000

_PREFIX = {
    DomainTag.SYN_AERIAL: "syn",
    DomainTag.REAL_GROUND: "rg",
    DomainTag.REAL_AERIAL: "ra",
}
POOL_FILES = {
    DomainTag.SYN_AERIAL: "syn_aerial.pool",
    DomainTag.REAL_GROUND: "real_ground.pool",
    DomainTag.REAL_AERIAL: "target_test.pool",
}


@dataclass(frozen=True)
class BenchmarkSpec:
    d: int = 16
    n_classes: int = NUM_CLASSES
    samples_per_class_per_domain: int = 30
    class_separation: float = 4.0
    viewpoint_rotation_angle: float = 1.8
    realism_bias_scale: float = 1.2
    noise_inflation: float = 0.5
    seed: int = 0
    class_spread: float = 3.0
    noise_scale: float = 4.0
    syn_scale: int = 2
    test_samples_per_class: int = 20
    subjects_per_domain: int = 5
    frames_per_clip: int = 64

    def validate(self) -> None:
        if self.d < 2:
            raise SpecError(f"d must be >= 2 (the rotation needs a plane), got {self.d}")
        if not 2 <= self.n_classes <= NUM_CLASSES:
            raise SpecError(f"n_classes must be in [2, {NUM_CLASSES}], got {self.n_classes}")
        for name in (
            "class_separation",
            "viewpoint_rotation_angle",
            "realism_bias_scale",
            "noise_inflation",
            "class_spread",
            "noise_scale",
        ):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise SpecError(f"{name} must be a finite value >= 0, got {value}")
        for name in (
            "samples_per_class_per_domain",
            "syn_scale",
            "test_samples_per_class",
            "subjects_per_domain",
            "frames_per_clip",
        ):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be >= 1, got {getattr(self, name)}")

    def windowing(self) -> WindowingConfig:
        """One window per emitted clip."""
        n = self.frames_per_clip
        count = min(16, n)
        return WindowingConfig(
            window_len=n, stride=n, retain_fraction=0.8, subsample_count=count, subsample_step=n // count
        )


DEFAULT_SPEC = BenchmarkSpec()


def dump_spec(spec: BenchmarkSpec) -> str:
    return dumps_json(asdict(spec))


def load_spec(path: Path) -> BenchmarkSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise SpecError(f"cannot read {path}: {err.strerror}") from None
    try:
        data = json.loads(text)
    except ValueError as err:
        raise SpecError(f"{path}: not valid JSON ({err})") from None
    return spec_from_dict(data)


def spec_from_dict(data: t.Mapping[str, t.Any]) -> BenchmarkSpec:
    known = {f.name for f in fields(BenchmarkSpec)}
    unknown = set(data) - known
    if unknown:
        raise SpecError(f"unknown benchmark field(s): {', '.join(sorted(unknown))}")
    spec = BenchmarkSpec(**data)
    spec.validate()
    return spec


@dataclass(frozen=True)
class BenchmarkBundle:
    syn_pool: SamplePool
    real_ground_pool: SamplePool
    target_test_pool: SamplePool
    spec: BenchmarkSpec
    manifests: dict[DomainTag, DatasetManifest] | None = None
    frames: dict[str, np.ndarray] | None = None

    def pool(self, domain: DomainTag) -> SamplePool:
        return {
            DomainTag.SYN_AERIAL: self.syn_pool,
            DomainTag.REAL_GROUND: self.real_ground_pool,
            DomainTag.REAL_AERIAL: self.target_test_pool,
        }[domain]


def class_means(spec: BenchmarkSpec) -> np.ndarray:
    """
    Means drawn one at a time from N(0, class_spread^2 I); a candidate closer than
    class_separation to an earlier mean is redrawn, up to MAX_MEAN_RETRIES times.
    """
    rng = rng_for(spec.seed, 0)
    means: list[np.ndarray] = []
    for c in range(spec.n_classes):
        for _ in range(MAX_MEAN_RETRIES):
            candidate = rng.normal(0.0, spec.class_spread, size=spec.d)
            if all(np.linalg.norm(candidate - m) >= spec.class_separation for m in means):
                means.append(candidate)
                break
        else:
            raise SpecError(
                f"could not place class {c} at distance >= {spec.class_separation} from the "
                f"others in d={spec.d} after {MAX_MEAN_RETRIES} tries"
            )
    return np.stack(means)


def rotate_in_plane(x: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the (0, 1) coordinates of each row by `angle` radians."""
    out = np.array(x, dtype=np.float64, copy=True)
    c, s = math.cos(angle), math.sin(angle)
    x0, x1 = out[..., 0].copy(), out[..., 1].copy()
    out[..., 0] = c * x0 - s * x1
    out[..., 1] = s * x0 + c * x1
    return out


def _domain_vectors(spec: BenchmarkSpec, means: np.ndarray) -> dict[DomainTag, np.ndarray]:
    n, d, k = spec.samples_per_class_per_domain, spec.d, spec.n_classes
    bias = rng_for(spec.seed, 1).standard_normal((k, d))
    target_noise = rng_for(spec.seed, 2).normal(0.0, spec.noise_scale, (k, spec.test_samples_per_class, d))
    real_noise = rng_for(spec.seed, 3).normal(0.0, spec.noise_scale, (k, n, d))
    syn_sigma = spec.noise_scale * (1 + spec.noise_inflation)
    syn_noise = rng_for(spec.seed, 4).normal(0.0, syn_sigma, (k, n * spec.syn_scale, d))
    rotated = rotate_in_plane(means, spec.viewpoint_rotation_angle)
    biased = means + spec.realism_bias_scale * bias
    return {
        DomainTag.SYN_AERIAL: biased[:, None, :] + syn_noise,
        DomainTag.REAL_GROUND: rotated[:, None, :] + real_noise,
        DomainTag.REAL_AERIAL: means[:, None, :] + target_noise,
    }


def _domain_clips(
    spec: BenchmarkSpec, domain: DomainTag, vectors: np.ndarray
) -> tuple[DatasetManifest, dict[str, np.ndarray]]:
    prefix = _PREFIX[domain]
    records = []
    frames = {}
    for c, per_class in enumerate(vectors):
        for i, vec in enumerate(per_class):
            clip_id = f"{prefix}_{c:02d}_{i:04d}"
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    subject_id=f"{prefix}-s{i % spec.subjects_per_domain:02d}",
                    domain=domain,
                    fps=Fraction(30),
                    frame_labels=(c,) * spec.frames_per_clip,
                    feature_path=f"features/{clip_id}.feat",
                )
            )
            frames[clip_id] = np.tile(vec, (spec.frames_per_clip, 1))
    manifest = DatasetManifest(records, ACTION_CLASSES, f"benchgen {domain} seed={spec.seed}")
    return manifest, frames


def generate_benchmark(spec: BenchmarkSpec = DEFAULT_SPEC) -> BenchmarkBundle:
    spec.validate()
    means = class_means(spec)
    vectors = _domain_vectors(spec, means)
    cfg = spec.windowing()
    pools = {}
    manifests = {}
    all_frames: dict[str, np.ndarray] = {}
    for domain, vecs in vectors.items():
        manifest, frames = _domain_clips(spec, domain, vecs)
        samples = build_sample_set(manifest, cfg, MemoryFeatureSource(frames))
        pools[domain] = SamplePool(samples, spec.seed, (f"benchgen {domain} seed={spec.seed}",))
        manifests[domain] = manifest
        all_frames.update(frames)
    log.info(
        "benchmark seed=%d: %d syn, %d real-ground, %d target samples",
        spec.seed,
        len(pools[DomainTag.SYN_AERIAL]),
        len(pools[DomainTag.REAL_GROUND]),
        len(pools[DomainTag.REAL_AERIAL]),
    )
    return BenchmarkBundle(
        pools[DomainTag.SYN_AERIAL],
        pools[DomainTag.REAL_GROUND],
        pools[DomainTag.REAL_AERIAL],
        spec,
        manifests,
        all_frames,
    )


def manifest_path(directory: Path, domain: DomainTag) -> Path:
    return Path(directory) / f"{domain}.manifest"


def emit_bundle(bundle: BenchmarkBundle, directory: Path) -> list[Path]:
    """
    Write the bundle as regular pipeline inputs:

        spec.json, classes.tsv
        <domain>.manifest          (feature_path column -> features/<clip>.feat)
        features/<clip_id>.feat
        pools/<domain>.pool
    """
    if bundle.manifests is None or bundle.frames is None:
        raise SpecError("bundle has no clips to emit (was it loaded from disk?)")
    directory = Path(directory)
    written = []
    path = directory / "spec.json"
    atomic_write_file(path, dump_spec(bundle.spec))
    written.append(path)
    path = directory / "classes.tsv"
    save_registry(ACTION_CLASSES, path)
    written.append(path)
    for domain, manifest in bundle.manifests.items():
        path = manifest_path(directory, domain)
        save_manifest(manifest, path)
        written.append(path)
        for rec in manifest.records:
            path = directory / rec.feature_path
            write_feature_sidecar(path, bundle.frames[rec.clip_id])
            written.append(path)
        path = directory / "pools" / POOL_FILES[domain]
        save_pool(bundle.pool(domain), path)
        written.append(path)
    log.info("wrote %d files to %s", len(written), directory)
    return written


def load_bundle(directory: Path) -> BenchmarkBundle:
    """Read an emitted bundle back through the manifest / windowing / sidecar pipeline."""
    directory = Path(directory)
    spec = load_spec(directory / "spec.json")
    source = SidecarFeatureSource(directory)
    cfg = spec.windowing()
    pools = {}
    manifests = {}
    for domain, name in POOL_FILES.items():
        manifest = load_manifest(manifest_path(directory, domain))
        samples: list[TrainingSample] = build_sample_set(manifest, cfg, source)
        pools[domain] = load_pool(directory / "pools" / name, samples)
        manifests[domain] = manifest
    return BenchmarkBundle(
        pools[DomainTag.SYN_AERIAL],
        pools[DomainTag.REAL_GROUND],
        pools[DomainTag.REAL_AERIAL],
        spec,
        manifests,
    )


@dataclass(frozen=True)
class SweepResult:
    strategy: str
    seed: int
    total_iterations: int
    top1: float


def evaluate_strategies(
    bundle: BenchmarkBundle,
    strategies: t.Sequence[StrategyKind],
    profile: TrainingProfile,
    policy: ConvergencePolicy,
    seeds: t.Iterable[int],
    target_per_class: int | None = None,
    trainer: TrainerHandle | None = None,
) -> dict[str, list[SweepResult]]:
    """
    Train every strategy once per master seed on the bundle's two sources and
    score the final checkpoint on the target pool.
    """
    from .curriculum import run_strategy
    from .metrics import evaluate

    target = target_per_class or bundle.spec.samples_per_class_per_domain
    results: dict[str, list[SweepResult]] = {s.label: [] for s in strategies}
    for seed in seeds:
        for strategy in strategies:
            record = run_strategy(
                strategy,
                profile,
                policy,
                bundle.syn_pool,
                bundle.real_ground_pool,
                None,
                seed,
                target,
                trainer=trainer,
            )
            assert record.final_checkpoint is not None
            top1 = evaluate(record.final_checkpoint, bundle.target_test_pool).top1_accuracy
            log.info("%s seed=%d: %d iterations, top-1 %.4f", strategy.label, seed, record.total_iterations, top1)
            results[strategy.label].append(SweepResult(strategy.label, seed, record.total_iterations, top1))
    return results
