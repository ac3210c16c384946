import csv
import json

import numpy as np
import pytest

from obdkit.datasets import make_tier_dataset
from obdkit.envs import make_gridworld
from obdkit.evaluation import (ONE_HOT_MARGIN, EvalProtocol, cross_architecture, cross_optimizer,
                               ensemble_evaluate, evaluate_synthetic, normalized_return,
                               policy_from_network, random_selection_baseline, reference_returns,
                               single_policy_trials, train_on_synthetic, write_results_csv,
                               write_results_json)
from obdkit.extract import value_iteration
from obdkit.mdp import TabularMdp, TabularPolicy, horizon_for_tolerance, policy_evaluation, sample_returns
from obdkit.policy import MlpArchitecture, OptimizerSpec, PolicyParams, init_params
from obdkit.synthetic import SyntheticDataset


@pytest.fixture(scope="module")
def grid():
    return make_gridworld(3, 3, slip_prob=0.1, gamma=0.9)


@pytest.fixture(scope="module")
def optimal_syn(grid):
    _, greedy = value_iteration(grid)
    actions = greedy.probs.argmax(axis=1)
    return SyntheticDataset.from_pairs(np.arange(9), actions, 9, grid.n_actions, margin=ONE_HOT_MARGIN)


FAST = EvalProtocol(steps=200, n_seeds=3, ensemble_k=2)


@pytest.mark.parametrize("j,expected", [(0.0, 0.0), (1.0, 100.0), (0.5, 50.0), (-0.5, -50.0), (1.5, 150.0)])
def test_normalized_return_examples(j, expected):
    assert normalized_return(j, 0.0, 1.0) == pytest.approx(expected, abs=1e-12)


def test_normalized_return_affine():
    assert normalized_return(3.0, 2.0, 6.0) == pytest.approx(25.0, abs=1e-12)
    with pytest.raises(ValueError, match="degenerate"):
        normalized_return(1.0, 2.0, 2.0)


def test_reference_returns_bracket(grid):
    j_rand, j_opt = reference_returns(grid)
    assert j_opt > j_rand
    for seed in range(5):
        pi = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(4), size=9))
        assert j_rand - 1e-12 <= j_opt + 1e-12
        assert policy_evaluation(grid, pi).j <= j_opt + 1e-9


def test_zero_final_layer_is_uniform(grid):
    arch = MlpArchitecture((9, 8, 4))
    p = init_params(arch, 0)
    W, b = list(p.weights), list(p.biases)
    W[-1] = np.zeros_like(W[-1])
    b[-1] = np.zeros_like(b[-1])
    pi = policy_from_network(PolicyParams(arch, W, b), grid)
    np.testing.assert_allclose(pi.probs, 0.25, atol=1e-15)
    j_rand, j_opt = reference_returns(grid)
    assert normalized_return(policy_evaluation(grid, pi).j, j_rand, j_opt) == pytest.approx(0.0, abs=1e-9)


def test_policy_from_network_shape_mismatch(grid):
    with pytest.raises(ValueError, match="states"):
        policy_from_network(init_params(MlpArchitecture((5, 4)), 0), grid)


def test_optimal_one_hots_reach_expert(grid, optimal_syn):
    res = evaluate_synthetic(optimal_syn, grid, EvalProtocol())
    assert len(res.normalized) == 5
    assert min(res.normalized) >= 95.0


def test_bridged_policy_matches_monte_carlo(grid, optimal_syn):
    arch = FAST.arch(9, 4)
    pi = policy_from_network(train_on_synthetic(optimal_syn, arch, FAST, seed=1), grid)
    exact = policy_evaluation(grid, pi).j
    mc = sample_returns(grid, pi, 100_000, horizon_for_tolerance(0.9, 1e-8), rng_seed=7)
    assert abs(mc.mean() - exact) <= 3 * mc.std(ddof=1) / np.sqrt(len(mc))


def test_evaluation_deterministic_and_parallel(grid, optimal_syn):
    a = evaluate_synthetic(optimal_syn, grid, FAST)
    b = evaluate_synthetic(optimal_syn, grid, FAST, n_jobs=2)
    assert a.raw_returns == b.raw_returns
    assert a.seeds == [0, 1, 2]


def test_ensemble_of_one_equals_single(grid, optimal_syn):
    ens = ensemble_evaluate(optimal_syn, grid, FAST, k=1, n_trials=3)
    single = evaluate_synthetic(optimal_syn, grid, FAST)
    np.testing.assert_allclose(ens.raw_returns, single.raw_returns, rtol=0, atol=1e-12)
    trials = single_policy_trials(optimal_syn, grid, FAST, k=1, n_trials=3)
    np.testing.assert_allclose(trials.raw_returns, single.raw_returns, rtol=0, atol=1e-12)


def test_ensemble_trial_seeds(grid, optimal_syn):
    ens = ensemble_evaluate(optimal_syn, grid, FAST)
    assert ens.seeds == [0, 2, 4] and ens.arch_label.endswith("ensemble2")
    assert len(single_policy_trials(optimal_syn, grid, FAST).raw_returns) == 6


def test_random_selection_baseline(grid):
    ds = make_tier_dataset(grid, "medium_replay", 2000, seed=0)
    res = random_selection_baseline(ds, 4, grid, FAST, n_repeats=3, seed=1)
    again = random_selection_baseline(ds, 4, grid, FAST, n_repeats=3, seed=1)
    assert len(res.normalized) == 3 and res.normalized == again.normalized


def test_degenerate_baseline_raises():
    flat = TabularMdp(np.full((2, 2, 2), 0.5), np.ones((2, 2)), 0.9, [0.5, 0.5])
    ds = make_tier_dataset(flat, "medium", 100, seed=0)
    with pytest.raises(ValueError, match="degenerate"):
        random_selection_baseline(ds, 4, flat, FAST, n_repeats=1)


def test_sweeps_and_writers(grid, optimal_syn, tmp_path):
    proto = EvalProtocol(steps=20, n_seeds=1)
    arch = cross_architecture(optimal_syn, grid, proto)
    assert set(arch) == {"2-layer", "3-layer", "4-layer", "5-layer", "6-layer", "residual"}
    assert arch["4-layer"][1] == pytest.approx(0.0, abs=1e-12)
    opt = cross_optimizer(optimal_syn, grid, proto, {"SGD": OptimizerSpec("gd", lr=0.1),
                                                     "Adam": OptimizerSpec("adam_style", lr=1e-3)})
    assert opt["SGD"][1] == pytest.approx(0.0, abs=1e-12)
    rows = {k: v[0] for k, v in arch.items()}
    write_results_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        table = list(csv.DictReader(fh))
    assert [r["label"] for r in table] == list(rows)
    write_results_json(rows, tmp_path / "r.json", config={"x": 1})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["config"] == {"x": 1} and set(doc["results"]) == set(rows)


def test_protocol_validation():
    with pytest.raises(ValueError):
        EvalProtocol(n_seeds=0)
