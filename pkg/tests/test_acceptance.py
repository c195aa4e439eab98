"""
Strategy orderings on the default benchmark, ten master seeds each. These are
slow and deselected by default; run them with `pytest -m slow`.
"""
import numpy as np
import pytest

from curricula.benchgen import DEFAULT_SPEC
from curricula.benchgen import evaluate_strategies
from curricula.benchgen import generate_benchmark
from curricula.curriculum import PROFILES
from curricula.curriculum import ConvergencePolicy
from curricula.curriculum import NaiveCombined
from curricula.curriculum import Progressive
from curricula.curriculum import SingleDomain
from curricula.curriculum import TwoStepFT
from curricula.dataset import DomainTag


pytestmark = pytest.mark.slow

SEEDS = range(10)


@pytest.fixture(scope="module")
def sweep():
    strategies = [
        NaiveCombined(),
        SingleDomain(DomainTag.SYN_AERIAL),
        SingleDomain(DomainTag.REAL_GROUND),
        TwoStepFT("s_to_r"),
        TwoStepFT("r_to_s"),
        Progressive(),
    ]
    bundle = generate_benchmark(DEFAULT_SPEC)
    return evaluate_strategies(bundle, strategies, PROFILES["desk"], ConvergencePolicy(), SEEDS)


def top1(sweep, label):
    return np.array([r.top1 for r in sweep[label]])


def iterations(sweep, label):
    return np.array([r.total_iterations for r in sweep[label]])


def test_combined_beats_single_domain(sweep):
    best_single = np.maximum(top1(sweep, "syn_only"), top1(sweep, "real_only"))
    assert (top1(sweep, "naive") > best_single).sum() >= 8


def test_synthetic_source_beats_real_ground(sweep):
    assert top1(sweep, "syn_only").mean() > top1(sweep, "real_only").mean()


def test_curricula_match_combined_accuracy(sweep):
    naive = top1(sweep, "naive").mean()
    assert abs(top1(sweep, "progressive").mean() - naive) <= 0.03
    assert abs(top1(sweep, "two_step_ft-s_to_r").mean() - naive) <= 0.03


def test_progressive_needs_fewest_iterations(sweep):
    naive = iterations(sweep, "naive").mean()
    two_step = iterations(sweep, "two_step_ft-s_to_r").mean()
    progressive = iterations(sweep, "progressive").mean()
    assert progressive <= two_step <= naive
    assert progressive <= 0.95 * two_step


def test_syn_to_real_order_wins(sweep):
    assert (top1(sweep, "two_step_ft-s_to_r") >= top1(sweep, "two_step_ft-r_to_s")).sum() >= 7
