"""Test-environment generators: random sparse MDPs and slippery gridworlds."""
from __future__ import annotations

import numpy as np

from .mdp import TabularMdp, ValidationError

# up, right, down, left as (dx, dy)
MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))
ACTION_NAMES = ("up", "right", "down", "left")


def make_random_mdp(n_states, n_actions, branching, reward_sparsity, gamma, seed) -> TabularMdp:
    """Random MDP with ``branching`` successors per (s, a).

    Successor sets are drawn uniformly without replacement and weighted by
    Dirichlet(1); a fraction ``1 - reward_sparsity`` of the (s, a) cells get a
    Uniform[0, 1] reward. The start distribution is Dirichlet(1).
    """
    if n_states < 2:
        raise ValidationError("n_states must be >= 2")
    if n_actions < 1:
        raise ValidationError("n_actions must be >= 1")
    if not 1 <= branching <= n_states:
        raise ValidationError(f"branching must lie in [1, {n_states}]")
    if not 0.0 <= reward_sparsity <= 1.0:
        raise ValidationError("reward_sparsity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    T = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            T[s, a, succ] = rng.dirichlet(np.ones(branching))
    T /= T.sum(axis=2, keepdims=True)

    n_cells = n_states * n_actions
    n_rewarded = int(round((1.0 - reward_sparsity) * n_cells))
    r = np.zeros(n_cells)
    cells = rng.choice(n_cells, size=n_rewarded, replace=False)
    r[cells] = rng.uniform(0.0, 1.0, size=n_rewarded)

    d0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(T, r.reshape(n_states, n_actions), gamma, d0)


def gridworld_index(width, x, y) -> int:
    return y * width + x


def make_gridworld(
    width,
    height,
    goal_reward=1.0,
    step_reward=0.0,
    slip_prob=0.0,
    gamma=0.9,
    goal=None,
    start=None,
    traps=(),
) -> TabularMdp:
    """Four-action gridworld with an absorbing goal.

    Moving into the goal pays ``goal_reward`` (in expectation over slips);
    every other non-terminal step pays ``step_reward``. The goal and any
    ``traps`` are absorbing with zero reward. Bumping into a wall leaves the
    agent in place. With probability ``slip_prob`` the move is replaced by one
    of the other three directions, uniformly.

    ``goal`` defaults to the bottom-right cell; ``start`` is a cell ``(x, y)``
    or ``None`` for a uniform start over non-terminal cells.
    """
    if width < 2 or height < 2:
        raise ValidationError("gridworld needs width, height >= 2")
    if not 0.0 <= slip_prob < 1.0:
        raise ValidationError("slip_prob must lie in [0, 1)")
    if goal_reward < 0 or step_reward < 0:
        raise ValidationError("rewards must be non-negative")
    n = width * height
    goal = (width - 1, height - 1) if goal is None else tuple(goal)
    g = gridworld_index(width, *goal)
    terminal = {g} | {gridworld_index(width, *c) for c in traps}

    T = np.zeros((n, 4, n))
    for y in range(height):
        for x in range(width):
            s = gridworld_index(width, x, y)
            if s in terminal:
                T[s, :, s] = 1.0
                continue
            for a in range(4):
                for b, (dx, dy) in enumerate(MOVES):
                    p = 1.0 - slip_prob if b == a else slip_prob / 3.0
                    if p == 0.0:
                        continue
                    nx, ny = x + dx, y + dy
                    if not (0 <= nx < width and 0 <= ny < height):
                        nx, ny = x, y
                    T[s, a, gridworld_index(width, nx, ny)] += p

    r = np.zeros((n, 4))
    live = np.array([s not in terminal for s in range(n)])
    r[live] = step_reward + goal_reward * T[live, :, g]

    if start is None:
        d0 = live / live.sum()
    else:
        d0 = np.zeros(n)
        d0[gridworld_index(width, *start)] = 1.0
    return TabularMdp(T, r, gamma, d0)
