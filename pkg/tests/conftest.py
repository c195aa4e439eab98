import numpy as np
import pytest

from curricula.benchgen import BenchmarkSpec
from curricula.benchgen import emit_bundle
from curricula.benchgen import generate_benchmark
from curricula.clips import TrainingSample
from curricula.curriculum import ConvergencePolicy
from curricula.curriculum import TrainingProfile
from curricula.dataset import NUM_CLASSES
from curricula.sampling import SamplePool


@pytest.fixture(autouse=True)
def no_log_env(monkeypatch):
    monkeypatch.delenv("CURRICULA_LOG", raising=False)


def make_pool(counts, d=4, seed=0, prefix="c", spread=1.0):
    """Pool with counts[c] distinct samples of class c, features around a per-class mean."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 3.0, size=(NUM_CLASSES, d))
    samples = []
    for label, n in sorted(dict(counts).items()):
        for i in range(n):
            vec = means[label] + rng.normal(0.0, spread, size=d)
            vec.setflags(write=False)
            samples.append(
                TrainingSample(
                    clip_id=f"{prefix}_{label:02d}_{i:04d}",
                    start_frame=0,
                    frame_indices=tuple(range(0, 64, 4)),
                    label=label,
                    features=vec,
                )
            )
    return SamplePool(samples, seed, (f"make_pool {prefix}",))


@pytest.fixture
def pool_factory():
    return make_pool


@pytest.fixture
def balanced_pool():
    return make_pool(dict.fromkeys(range(NUM_CLASSES), 10))


@pytest.fixture
def tiny_profile():
    return TrainingProfile("tiny", base_lr=0.05, finetune_lr=0.01, e1=2, e2=1, batch_size=12)


@pytest.fixture
def tiny_policy():
    return ConvergencePolicy(patience=2, max_epochs=3, holdout_fraction=0.2)


@pytest.fixture
def small_spec():
    return BenchmarkSpec(
        d=4,
        samples_per_class_per_domain=6,
        test_samples_per_class=4,
        subjects_per_domain=3,
        class_separation=1.0,
        class_spread=3.0,
        noise_scale=1.0,
    )


@pytest.fixture
def bench_dir(tmp_path, small_spec):
    path = tmp_path / "bench"
    emit_bundle(generate_benchmark(small_spec), path)
    return path


@pytest.fixture
def run_config(tmp_path, bench_dir):
    path = tmp_path / "run.yaml"
    path.write_text(
        "profile: {base: desk, e1: 2, e2: 1}\n"
        "strategies: [naive, two_step_ft, progressive]\n"
        "target_per_class: 8\n"
        "convergence: {patience: 2, max_epochs: 3, holdout_fraction: 0.2}\n"
        f"data: {{bundle: {bench_dir.name}}}\n"
        "out_dir: runs\n"
        "master_seed: 7\n"
    )
    return path


MANIFEST = """\
#manifest v1 fixture
clip_a\ts1\treal_ground\t30\t0:64
clip_b\ts2\tsyn_aerial\t30000/1001\t2:52,0:12
clip_c\ts2\treal_aerial\t25\t0:30,3:64,0:10
"""


@pytest.fixture
def manifest_file(tmp_path):
    path = tmp_path / "fixture.manifest"
    path.write_text(MANIFEST)
    return path
