import json

import pytest

from curricula.curriculum import PROFILES
from curricula.curriculum import Combined
from curricula.curriculum import ConvergencePolicy
from curricula.curriculum import DatasetSpec
from curricula.curriculum import FixedEpochs
from curricula.curriculum import NaiveCombined
from curricula.curriculum import Progressive
from curricula.curriculum import RealFull
from curricula.curriculum import RoundPlan
from curricula.curriculum import SingleDomain
from curricula.curriculum import SynFull
from curricula.curriculum import SynSubset
from curricula.curriculum import TrainingProfile
from curricula.curriculum import TwoStepFT
from curricula.curriculum import UntilConvergence
from curricula.curriculum import build_schedule
from curricula.curriculum import check_schedule
from curricula.curriculum import load_run_record
from curricula.curriculum import parse_strategy
from curricula.curriculum import profile_from_dict
from curricula.curriculum import run_schedule
from curricula.curriculum import run_strategy
from curricula.curriculum import stage_dataset
from curricula.curriculum import title_for_label
from curricula.dataset import DomainTag
from curricula.exceptions import ComparisonError
from curricula.exceptions import ConfigError
from curricula.exceptions import DimensionError
from curricula.exceptions import NonFiniteError
from curricula.exceptions import TrainerError
from curricula.sampling import dumps_pool
from curricula.trainer import ReferenceTrainer
from curricula.trainer import dumps_checkpoint
from curricula.trainer import iterations_for
from curricula.trainer import load_checkpoint
from curricula.trainer import train_epochs
from curricula.utils import derive_seed


POLICY = ConvergencePolicy()


def summary(plans):
    return [(p.round_index, str(p.dataset), str(p.duration).split("(")[0], p.learning_rate) for p in plans]


@pytest.fixture
def sources(pool_factory):
    syn = pool_factory({c: 12 for c in range(12)}, seed=1, prefix="syn")
    real = pool_factory({c: 6 for c in range(12)}, seed=2, prefix="rg")
    return syn, real


def test_progressive_mvitv2_schedule():
    plans = build_schedule(Progressive(), PROFILES["mvitv2"], POLICY)
    assert summary(plans) == [
        (1, "SynSubset(0.5)", "FixedEpochs", 1e-4),
        (2, "SynFull", "FixedEpochs", 1e-4),
        (3, "RealFull", "UntilConvergence", 5e-5),
    ]
    assert [p.duration.epochs for p in plans[:2]] == [30, 60]
    assert plans[-1].duration == UntilConvergence(POLICY)


def test_progressive_combined_schedule():
    plans = build_schedule(Progressive(final="combined"), PROFILES["mvitv2"], POLICY)
    assert summary(plans) == [
        (1, "SynSubset(0.5)", "FixedEpochs", 1e-4),
        (2, "SynFull", "FixedEpochs", 1e-4),
        (3, "Combined", "UntilConvergence", 5e-5),
    ]
    plans = build_schedule(Progressive(direction="r_to_s", final="combined"), PROFILES["desk"], POLICY)
    assert [str(p.dataset) for p in plans] == ["RealSubset(0.5)", "RealFull", "Combined"]


def test_naive_schedule():
    [plan] = build_schedule(NaiveCombined(), PROFILES["slowfast"], POLICY)
    assert plan.dataset == Combined
    assert plan.learning_rate == 0.1
    assert isinstance(plan.duration, UntilConvergence)


def test_two_step_slowfast_schedule():
    plans = build_schedule(TwoStepFT("s_to_r"), PROFILES["slowfast"], POLICY)
    assert summary(plans) == [(1, "SynFull", "FixedEpochs", 0.1), (2, "RealFull", "UntilConvergence", 0.05)]
    assert plans[0].duration == FixedEpochs(150)


def test_reversed_directions():
    plans = build_schedule(TwoStepFT("r_to_s"), PROFILES["desk"], POLICY)
    assert [p.dataset for p in plans] == [RealFull, SynFull]
    plans = build_schedule(Progressive(direction="r_to_s"), PROFILES["desk"], POLICY)
    assert [str(p.dataset) for p in plans] == ["RealSubset(0.5)", "RealFull", "SynFull"]


def test_single_domain_schedules():
    assert build_schedule(SingleDomain(DomainTag.SYN_AERIAL), PROFILES["desk"], POLICY)[0].dataset == SynFull
    assert build_schedule(SingleDomain(DomainTag.REAL_GROUND), PROFILES["desk"], POLICY)[0].dataset == RealFull
    with pytest.raises(ConfigError, match="evaluation-only"):
        build_schedule(SingleDomain(DomainTag.REAL_AERIAL), PROFILES["desk"], POLICY)


def test_progressive_round_counts():
    with pytest.raises(ConfigError, match="explicit fractions"):
        build_schedule(Progressive(rounds=4), PROFILES["desk"], POLICY)
    plans = build_schedule(Progressive(rounds=4, fractions=(0.25, 0.5, 1.0)), PROFILES["desk"], POLICY)
    assert [str(p.dataset) for p in plans] == ["SynSubset(0.25)", "SynSubset(0.5)", "SynFull", "RealFull"]
    assert [p.learning_rate for p in plans] == [0.004, 0.004, 0.004, 0.0005]
    plans = build_schedule(Progressive(first_fraction=0.3), PROFILES["desk"], POLICY)
    assert str(plans[0].dataset) == "SynSubset(0.3)"


@pytest.mark.parametrize(
    "strategy, msg",
    [
        (Progressive(rounds=1), "at least 2 rounds"),
        (Progressive(rounds=3, fractions=(0.5, 0.9)), "must be 1.0"),
        (Progressive(rounds=3, fractions=(0.5,)), "need 2 expansion fractions"),
        (Progressive(rounds=4, fractions=(0.5, 0.4, 1.0)), "strictly increasing"),
        (TwoStepFT("sideways"), "direction"),
        (Progressive(final="both"), "final must be"),
    ],
)
def test_bad_strategies(strategy, msg):
    with pytest.raises(ConfigError, match=msg):
        build_schedule(strategy, PROFILES["desk"], POLICY)


def test_every_schedule_ends_with_one_convergence_round():
    for name in ("naive", "two_step_ft", "progressive", "syn_only", "real_only"):
        plans = build_schedule(parse_strategy(name), PROFILES["desk"], POLICY)
        durations = [isinstance(p.duration, UntilConvergence) for p in plans]
        assert durations == [False] * (len(plans) - 1) + [True]


def test_check_schedule():
    uc = UntilConvergence()
    with pytest.raises(ConfigError, match="only the final round"):
        check_schedule([RoundPlan(1, SynFull, uc, 0.1), RoundPlan(2, RealFull, uc, 0.1)])
    with pytest.raises(ConfigError, match="has index 2"):
        check_schedule([RoundPlan(2, SynFull, uc, 0.1)])
    with pytest.raises(ConfigError, match="empty"):
        check_schedule([])


def test_profile_validation():
    with pytest.raises(ConfigError, match="finetune_lr < base_lr"):
        TrainingProfile("bad", 0.01, 0.01, 1, 1, 1).validate()
    with pytest.raises(ConfigError, match="batch_size"):
        TrainingProfile("bad", 0.1, 0.01, 1, 1, 0).validate()


def test_profile_from_dict():
    assert profile_from_dict("slowfast") == PROFILES["slowfast"]
    profile = profile_from_dict({"base": "desk", "e1": 7})
    assert (profile.name, profile.e1, profile.base_lr) == ("desk", 7, 0.004)
    with pytest.raises(ConfigError, match="unknown profile"):
        profile_from_dict("resnet")
    with pytest.raises(ConfigError, match="incomplete profile"):
        profile_from_dict({"base_lr": 0.1})
    with pytest.raises(ConfigError, match="unknown profile field"):
        profile_from_dict({"base": "desk", "momentum": 0.9})


@pytest.mark.parametrize(
    "name, label, title",
    [
        ("naive", "naive", "Real (G) + Synthetic (A)"),
        ("two_step_ft", "two_step_ft-s_to_r", "Non-Progressive + FT (S-to-R)"),
        ("two_step_ft-r_to_s", "two_step_ft-r_to_s", "Non-Progressive + FT (R-to-S)"),
        ("progressive", "progressive", "Progressive + FT"),
        ("progressive_combined", "progressive-combined", "Progressive + Combined"),
        ("progressive-r_to_s-combined", "progressive-r_to_s-combined", "Progressive + Combined (R-to-S)"),
        ("syn_only", "syn_only", "Synthetic Only (Aerial)"),
        ("real_only", "real_only", "Real Only (Ground)"),
    ],
)
def test_labels_and_titles(name, label, title):
    strategy = parse_strategy(name)
    assert strategy.label == label
    assert strategy.title == title
    assert title_for_label(label) == title


def test_unknown_strategy():
    with pytest.raises(ConfigError, match="unknown strategy"):
        parse_strategy("curriculum_by_vibes")
    assert title_for_label("custom") == "custom"


def test_dataset_spec_names():
    assert [str(s) for s in (SynFull, RealFull, Combined, SynSubset(0.5))] == [
        "SynFull",
        "RealFull",
        "Combined",
        "SynSubset(0.5)",
    ]


def test_stage_subset(balanced_pool):
    pool = stage_dataset(SynSubset(0.5), balanced_pool, balanced_pool, 10, seed=3)
    assert set(pool.class_counts().values()) == {10}
    identities = pool.identities()
    assert len(identities) == 60
    for c in range(12):
        assert sum(1 for key in identities if key[0].startswith(f"c_{c:02d}_")) == 5
    assert pool.lineage[-2] == "stage SynSubset(0.5)"


def test_stage_subset_is_deterministic(balanced_pool):
    a = stage_dataset(SynSubset(0.5), balanced_pool, balanced_pool, 10, seed=3)
    b = stage_dataset(SynSubset(0.5), balanced_pool, balanced_pool, 10, seed=3)
    assert dumps_pool(a) == dumps_pool(b)


def test_stage_combined(sources):
    syn, real = sources
    pool = stage_dataset(Combined, syn, real, 12, seed=0)
    assert set(pool.class_counts().values()) == {24}
    assert len(stage_dataset(RealFull, syn, real, 12, seed=0)) == 144


def fixed_plan(epochs, spec=SynFull):
    return [RoundPlan(1, spec, FixedEpochs(epochs), 0.01)]


@pytest.mark.parametrize("counts, epochs, expected", [({c: 15 for c in range(6)}, 2, 4), ({c: 10 for c in range(10)}, 1, 3)])
def test_fixed_round_iterations(pool_factory, counts, epochs, expected):
    pool = pool_factory(counts)
    record = run_schedule(
        fixed_plan(epochs), (pool, pool), ReferenceTrainer(), None, 0, target_per_class=1, batch_size=45
    )
    assert record.total_iterations == expected
    assert record.rounds[0].pool_size == len(pool)
    assert record.rounds[0].target_top1 is None


def test_run_is_deterministic(tmp_path, sources, tiny_profile, tiny_policy):
    syn, real = sources
    out = []
    for name in ("a", "b"):
        run_dir = tmp_path / name
        run_strategy(Progressive(), tiny_profile, tiny_policy, syn, real, real, 42, 8, run_dir=run_dir)
        out.append(run_dir)
    a, b = out
    assert (a / "run_record.json").read_bytes() == (b / "run_record.json").read_bytes()
    for r in (1, 2, 3):
        for name in ("checkpoint.ckpt", "pool.pool", "log.jsonl"):
            assert (a / f"round_{r}" / name).read_bytes() == (b / f"round_{r}" / name).read_bytes()


def test_progressive_run(tmp_path, sources, tiny_profile, tiny_policy):
    syn, real = sources
    record = run_strategy(Progressive(), tiny_profile, tiny_policy, syn, real, real, 5, 12, run_dir=tmp_path)
    assert [r.plan.round_index for r in record.rounds] == [1, 2, 3]
    assert record.seeds == [derive_seed(5, r) for r in (1, 2, 3)]
    assert record.final_checkpoint.lineage == (("progressive", 1), ("progressive", 2), ("progressive", 3))
    first, second, last = record.rounds
    # 6 of 12 syn samples per class, oversampled back to 12
    assert first.pool_size == second.pool_size == 144
    assert first.iterations == iterations_for(144, 12, tiny_profile.e1) == 24
    assert second.iterations == iterations_for(144, 12, tiny_profile.e2) == 12
    assert last.iterations <= tiny_policy.max_epochs * iterations_for(last.pool_size, 12, 1)
    assert record.total_iterations == sum(r.iterations for r in record.rounds)
    data = load_run_record(tmp_path / "run_record.json")
    assert data == json.loads(record.dumps())
    assert [r["dataset"] for r in data["rounds"]] == ["SynSubset(0.5)", "SynFull", "RealFull"]
    assert data["rounds"][-1]["checkpoint"] == load_checkpoint(tmp_path / "round_3" / "checkpoint.ckpt").checkpoint_id
    assert sorted(p.name for p in (tmp_path / "round_1").iterdir()) == ["checkpoint.ckpt", "log.jsonl", "pool.pool"]


def test_progressive_combined_run(sources, tiny_profile, tiny_policy):
    syn, real = sources
    record = run_strategy(Progressive(final="combined"), tiny_profile, tiny_policy, syn, real, real, 5, 12)
    assert record.strategy == "progressive-combined"
    first, second, last = record.rounds
    assert first.pool_size == second.pool_size == 144
    assert last.plan.dataset == Combined
    assert last.plan.learning_rate == tiny_profile.finetune_lr
    # 12 syn + 12 balanced real per class, less the holdout
    assert 144 < last.pool_size < 288
    assert 0.0 <= last.target_top1 <= 1.0


def test_round_log(tmp_path, sources, tiny_profile, tiny_policy):
    syn, real = sources
    record = run_strategy(TwoStepFT(), tiny_profile, tiny_policy, syn, real, None, 0, 12, run_dir=tmp_path)
    for result in record.rounds:
        path = tmp_path / f"round_{result.plan.round_index}" / "log.jsonl"
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(lines) == result.iterations
        assert [line["iteration"] for line in lines] == list(range(1, result.iterations + 1))
        assert {line["round"] for line in lines} == {result.plan.round_index}
    last = [json.loads(line) for line in (tmp_path / "round_2" / "log.jsonl").read_text().splitlines()]
    per_epoch = iterations_for(record.rounds[-1].pool_size, 12, 1)
    evaluated = [line["iteration"] for line in last if "holdout_acc" in line]
    assert evaluated == list(range(per_epoch, len(last) + 1, per_epoch))


def test_early_stop_without_improvement(sources, tiny_profile):
    syn, real = sources
    # nothing can beat the first evaluation by a full point of accuracy
    policy = ConvergencePolicy(patience=1, min_delta=1.0, max_epochs=10, holdout_fraction=0.2)
    record = run_strategy(SingleDomain(DomainTag.REAL_GROUND), tiny_profile, policy, syn, real, None, 0, 6)
    [result] = record.rounds
    assert result.iterations == 2 * iterations_for(result.pool_size, 12, 1)


def test_max_epochs_bound(sources, tiny_profile):
    syn, real = sources
    policy = ConvergencePolicy(eval_every=5, patience=1000, max_epochs=2, holdout_fraction=0.2)
    record = run_strategy(NaiveCombined(), tiny_profile, policy, syn, real, None, 0, 12)
    [result] = record.rounds
    assert result.iterations == 2 * iterations_for(result.pool_size, 12, 1)


def test_handoff_carries_optimizer_state(tmp_path, sources):
    syn, real = sources
    trainer = ReferenceTrainer()
    plans = [
        RoundPlan(1, SynFull, FixedEpochs(2), 0.01),
        RoundPlan(2, RealFull, FixedEpochs(1), 0.002),
    ]
    kwargs = dict(target_per_class=12, batch_size=12, strategy="ab")
    both = run_schedule(plans, (syn, real), trainer, None, 9, **kwargs)
    run_schedule(plans[:1], (syn, real), trainer, None, 9, run_dir=tmp_path, **kwargs)
    ckpt = load_checkpoint(tmp_path / "round_1" / "checkpoint.ckpt").with_stage("ab", 2)
    seed = derive_seed(9, 2)
    pool = stage_dataset(RealFull, syn, real, 12, seed)
    resumed = train_epochs(ckpt, pool, 12, 0.002, 1, seed=seed).checkpoint
    assert dumps_checkpoint(resumed) == dumps_checkpoint(both.final_checkpoint)
    assert both.final_checkpoint.opt.step == both.total_iterations


def test_reset_optimizer(sources):
    syn, real = sources
    plans = [RoundPlan(1, SynFull, FixedEpochs(1), 0.01), RoundPlan(2, RealFull, FixedEpochs(1), 0.002)]
    kwargs = dict(target_per_class=12, batch_size=12)
    carried = run_schedule(plans, (syn, real), ReferenceTrainer(), None, 0, **kwargs)
    reset = run_schedule(plans, (syn, real), ReferenceTrainer(), None, 0, reset_optimizer=True, **kwargs)
    assert reset.final_checkpoint.opt.step == reset.rounds[-1].iterations
    assert reset.rounds[0].checkpoint_id == carried.rounds[0].checkpoint_id
    assert reset.rounds[1].checkpoint_id != carried.rounds[1].checkpoint_id


class ExplodingTrainer(ReferenceTrainer):
    def train_epochs(self, ckpt, pool, batch_size, lr, epochs, seed=None, on_step=None):
        if ckpt.lineage[-1][1] == 2:
            raise NonFiniteError("non-finite value in W at step 99")
        return train_epochs(ckpt, pool, batch_size, lr, epochs, seed=seed, on_step=on_step)


def test_failure_keeps_completed_rounds(tmp_path, sources, tiny_profile, tiny_policy):
    syn, real = sources
    with pytest.raises(TrainerError) as cm:
        run_strategy(
            Progressive(), tiny_profile, tiny_policy, syn, real, None, 0, 12,
            trainer=ExplodingTrainer(), run_dir=tmp_path,
        )
    err = cm.value
    assert err.exit_code == 3
    assert err.last_checkpoint == tmp_path / "round_1" / "checkpoint.ckpt"
    assert "round 2" in str(err)
    data = load_run_record(tmp_path / "run_record.json")
    assert [r["round"] for r in data["rounds"]] == [1]
    assert not (tmp_path / "round_2").exists()


class MisshapenTrainer(ReferenceTrainer):
    def train_epochs(self, ckpt, pool, batch_size, lr, epochs, seed=None, on_step=None):
        raise DimensionError("labels have shape (12, 1), expected (12,)")


def test_dimension_error_is_not_a_training_failure(sources, tiny_profile, tiny_policy):
    syn, real = sources
    with pytest.raises(DimensionError, match="expected") as cm:
        run_strategy(Progressive(), tiny_profile, tiny_policy, syn, real, None, 0, 12, trainer=MisshapenTrainer())
    assert not isinstance(cm.value, TrainerError)
    assert cm.value.exit_code == 2


def test_mismatched_dims(pool_factory):
    with pytest.raises(ConfigError, match="feature dimension"):
        run_schedule(
            fixed_plan(1),
            (pool_factory({0: 2}, d=3), pool_factory({0: 2}, d=4)),
            ReferenceTrainer(),
            None,
            0,
            target_per_class=1,
            batch_size=2,
        )


def test_run_record_totals_checked(tmp_path):
    path = tmp_path / "run_record.json"
    path.write_text(json.dumps({"rounds": [{"iterations": 3}], "total_iterations": 4}))
    with pytest.raises(ComparisonError, match="does not add up"):
        load_run_record(path)


def test_dataset_spec_for_real_subset():
    assert str(DatasetSpec("real", 0.25)) == "RealSubset(0.25)"
