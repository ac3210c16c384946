import itertools

import numpy as np
import pytest

from obdkit.envs import gridworld_index, make_gridworld, make_random_mdp
from obdkit.extract import value_iteration
from obdkit.mdp import TabularPolicy, ValidationError, policy_evaluation


def brute_force_best_j(mdp, live):
    """Max J over all deterministic policies, enumerating actions on ``live`` states."""
    S, A = mdp.n_states, mdp.n_actions
    best = -np.inf
    combos = np.array(list(itertools.product(range(A), repeat=len(live))))
    for chunk in np.array_split(combos, 16):
        acts = np.zeros((len(chunk), S), dtype=int)
        acts[:, live] = chunk
        P = mdp.transition[np.arange(S), acts]            # (B, S, S)
        r = mdp.reward[np.arange(S), acts]                # (B, S)
        v = np.linalg.solve(np.eye(S) - mdp.gamma * P, r[..., None])[..., 0]
        best = max(best, float((v @ mdp.initial_dist).max()))
    return best


def test_random_mdp_is_deterministic_per_seed():
    a = make_random_mdp(9, 3, 4, 0.5, 0.9, seed=42)
    b = make_random_mdp(9, 3, 4, 0.5, 0.9, seed=42)
    for f in ("transition", "reward", "initial_dist"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_random_mdp_branching_one_single_action_is_a_chain():
    mdp = make_random_mdp(6, 1, 1, 0.0, 0.9, seed=0)
    assert np.all(np.isin(mdp.transition, (0.0, 1.0)))
    assert np.all(mdp.transition.sum(axis=2) == 1.0)


def test_random_mdp_branching_counts():
    mdp = make_random_mdp(10, 2, 3, 0.0, 0.9, seed=1)
    assert np.all((mdp.transition > 0).sum(axis=2) == 3)


def test_random_mdp_full_sparsity_gives_zero_return():
    mdp = make_random_mdp(5, 3, 2, 1.0, 0.9, seed=3)
    assert not mdp.reward.any()
    assert policy_evaluation(mdp, TabularPolicy.uniform(5, 3)).j == 0.0


@pytest.mark.parametrize("kw", [dict(n_states=1), dict(branching=0), dict(branching=7),
                                dict(reward_sparsity=1.2), dict(n_actions=0)])
def test_random_mdp_rejects_bad_ranges(kw):
    args = dict(n_states=6, n_actions=2, branching=2, reward_sparsity=0.5, gamma=0.9, seed=0)
    args.update(kw)
    with pytest.raises(ValidationError):
        make_random_mdp(**args)


def test_gridworld_one_step_goal():
    mdp = make_gridworld(2, 2, goal_reward=1.0, slip_prob=0.0, gamma=0.9, start=(0, 1))
    q, greedy = value_iteration(mdp)
    assert policy_evaluation(mdp, greedy).j == pytest.approx(1.0, abs=1e-12)
    assert greedy.probs[gridworld_index(2, 0, 1), 1] == 1.0  # move right


def test_gridworld_without_rewards_is_flat():
    mdp = make_gridworld(4, 3, goal_reward=0.0, step_reward=0.0, slip_prob=0.2)
    assert policy_evaluation(mdp, TabularPolicy.uniform(12, 4)).j == 0.0


def test_gridworld_walls_and_slip():
    mdp = make_gridworld(3, 3, slip_prob=0.3)
    corner = gridworld_index(3, 0, 0)
    # "up" from the top-left corner: intended move and the "left" slip both hit walls
    assert mdp.transition[corner, 0, corner] == pytest.approx(0.7 + 0.1)
    assert mdp.transition[corner, 0, gridworld_index(3, 1, 0)] == pytest.approx(0.1)
    goal = gridworld_index(3, 2, 2)
    assert np.all(mdp.transition[goal, :, goal] == 1.0) and not mdp.reward[goal].any()


def test_gridworld_value_iteration_matches_enumeration():
    mdp = make_gridworld(3, 3, goal_reward=1.0, step_reward=0.05, slip_prob=0.1, gamma=0.9)
    _, greedy = value_iteration(mdp)
    live = [s for s in range(9) if s != gridworld_index(3, 2, 2)]
    assert policy_evaluation(mdp, greedy).j == pytest.approx(brute_force_best_j(mdp, live), abs=1e-9)


def test_gridworld_5x5_optimal_beats_uniform():
    mdp = make_gridworld(5, 5, slip_prob=0.1)
    _, greedy = value_iteration(mdp)
    assert policy_evaluation(mdp, greedy).j > policy_evaluation(mdp, TabularPolicy.uniform(25, 4)).j


@pytest.mark.parametrize("kw", [dict(width=1), dict(slip_prob=1.0), dict(goal_reward=-1.0)])
def test_gridworld_rejects_bad_ranges(kw):
    args = dict(width=3, height=3)
    args.update(kw)
    with pytest.raises(ValidationError):
        make_gridworld(**args)
