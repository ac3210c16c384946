"""Finite MDPs and their exact evaluation.

Returns, value functions and discounted occupancy measures are all obtained
from dense linear solves, so results are exact up to floating point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when an MDP, policy or file violates its invariants."""


def _frozen(x, dtype=np.float64):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP ``<S, A, T, r, gamma, d0>``.

    ``transition[s, a, s']`` is the probability of moving to ``s'`` after
    taking ``a`` in ``s``; ``reward[s, a]`` is non-negative.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray

    def __post_init__(self):
        T = _frozen(self.transition)
        r = _frozen(self.reward)
        d0 = _frozen(self.initial_dist)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", d0)
        object.__setattr__(self, "gamma", float(self.gamma))

        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise ValidationError(f"transition must have shape (S, A, S), got {T.shape}")
        S, A, _ = T.shape
        if S < 1 or A < 1:
            raise ValidationError("need at least one state and one action")
        if r.shape != (S, A):
            raise ValidationError(f"reward shape {r.shape} != {(S, A)}")
        if d0.shape != (S,):
            raise ValidationError(f"initial_dist shape {d0.shape} != {(S,)}")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(r)) and np.all(np.isfinite(d0))):
            raise ValidationError("non-finite entries")
        if T.min() < 0 or np.abs(T.sum(axis=2) - 1.0).max() > NORM_TOL:
            raise ValidationError("transition rows must be probability vectors")
        if r.min() < 0:
            raise ValidationError("rewards must be non-negative")
        if d0.min() < 0 or abs(d0.sum() - 1.0) > NORM_TOL:
            raise ValidationError("initial_dist must be a probability vector")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def r_max(self) -> float:
        return float(self.reward.max())

    def with_initial_dist(self, d0) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, self.gamma, d0)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        for key in ("n_states", "n_actions", "gamma", "transition", "reward", "initial_dist"):
            if key not in doc:
                raise ValidationError(f"MDP document is missing field '{key}'")
        mdp = cls(doc["transition"], doc["reward"], doc["gamma"], doc["initial_dist"])
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValidationError(
                f"declared shape ({doc['n_states']}, {doc['n_actions']}) does not match "
                f"arrays ({mdp.n_states}, {mdp.n_actions})"
            )
        return mdp


def save_mdp(mdp: TabularMdp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh)


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        return TabularMdp.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic matrix ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        object.__setattr__(self, "probs", p)
        if p.ndim != 2:
            raise ValidationError(f"policy must be a matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0:
            raise ValidationError("policy entries must be finite and non-negative")
        if np.abs(p.sum(axis=1) - 1.0).max() > NORM_TOL:
            raise ValidationError("policy rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states, n_actions) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


def as_policy(policy) -> TabularPolicy:
    if isinstance(policy, TabularPolicy):
        return policy
    return TabularPolicy(policy)


@dataclass(frozen=True, eq=False)
class ValueProfile:
    v: np.ndarray
    q: np.ndarray
    j: float


@dataclass(frozen=True, eq=False)
class OccupancyMeasures:
    d: np.ndarray
    rho: np.ndarray


def _check_dims(mdp: TabularMdp, policy: TabularPolicy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValidationError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def policy_matrices(mdp: TabularMdp, policy) -> tuple[np.ndarray, np.ndarray]:
    """Return the policy-averaged transition matrix and reward vector."""
    pi = as_policy(policy)
    _check_dims(mdp, pi)
    P = np.einsum("sa,sat->st", pi.probs, mdp.transition)
    r = np.einsum("sa,sa->s", pi.probs, mdp.reward)
    return P, r


def policy_evaluation(mdp: TabularMdp, policy) -> ValueProfile:
    """Solve ``(I - gamma P_pi) v = r_pi`` and derive ``q`` and ``J``."""
    P, r = policy_matrices(mdp, policy)
    A = np.eye(mdp.n_states) - mdp.gamma * P
    v = np.linalg.solve(A, r)
    q = mdp.reward + mdp.gamma * mdp.transition @ v
    if q.min() < -NORM_TOL:
        raise ValidationError(f"negative action value {q.min():.3e}")
    return ValueProfile(v=v, q=q, j=float(mdp.initial_dist @ v))


def occupancy_measures(mdp: TabularMdp, policy) -> OccupancyMeasures:
    """Discounted stationary state and state-action distributions.

    ``d`` solves ``(I - gamma P_pi^T) d = (1 - gamma) d0`` and
    ``rho[s, a] = pi(a|s) d(s)``.
    """
    pi = as_policy(policy)
    P, _ = policy_matrices(mdp, pi)
    A = np.eye(mdp.n_states) - mdp.gamma * P.T
    d = np.linalg.solve(A, (1.0 - mdp.gamma) * mdp.initial_dist)
    return OccupancyMeasures(d=d, rho=pi.probs * d[:, None])


def compute_t_step_distributions(mdp: TabularMdp, policy, horizon: int):
    """List of ``(d^t, rho^t)`` for ``t = 0..horizon`` by forward propagation."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    pi = as_policy(policy)
    P, _ = policy_matrices(mdp, pi)
    d = mdp.initial_dist.copy()
    out = []
    for _ in range(horizon + 1):
        out.append((d, pi.probs * d[:, None]))
        d = P.T @ d
    return out


def truncated_discounted_occupancy(mdp: TabularMdp, policy, horizon: int) -> np.ndarray:
    """``(1 - gamma) sum_{t<=horizon} gamma^t d^t`` without storing every step."""
    P, _ = policy_matrices(mdp, policy)
    d = mdp.initial_dist.copy()
    acc = np.zeros_like(d)
    w = 1.0
    for _ in range(horizon + 1):
        acc += w * d
        d = P.T @ d
        w *= mdp.gamma
    return (1.0 - mdp.gamma) * acc


@dataclass
class Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    discounted_return: float = field(default=0.0)


def sample_episode(mdp: TabularMdp, policy, horizon: int, rng_seed) -> Episode:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    pi = as_policy(policy)
    _check_dims(mdp, pi)
    rng = np.random.default_rng(rng_seed)
    S = np.empty(horizon, dtype=int)
    A = np.empty(horizon, dtype=int)
    R = np.empty(horizon)
    SP = np.empty(horizon, dtype=int)
    s = rng.choice(mdp.n_states, p=mdp.initial_dist)
    ret, disc = 0.0, 1.0
    for t in range(horizon):
        a = rng.choice(mdp.n_actions, p=pi.probs[s])
        sp = rng.choice(mdp.n_states, p=mdp.transition[s, a])
        S[t], A[t], R[t], SP[t] = s, a, mdp.reward[s, a], sp
        ret += disc * R[t]
        disc *= mdp.gamma
        s = sp
    return Episode(S, A, R, SP, ret)


def _categorical(rng, cdf_rows: np.ndarray) -> np.ndarray:
    # one draw per row of a matrix of cumulative distributions
    u = rng.random(cdf_rows.shape[0])
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def sample_returns(mdp: TabularMdp, policy, n_episodes: int, horizon: int, rng_seed) -> np.ndarray:
    """Discounted returns of ``n_episodes`` independent rollouts, vectorised."""
    pi = as_policy(policy)
    _check_dims(mdp, pi)
    rng = np.random.default_rng(rng_seed)
    pi_cdf = np.cumsum(pi.probs, axis=1)
    T_cdf = np.cumsum(mdp.transition, axis=2)
    d0_cdf = np.cumsum(mdp.initial_dist)
    s = _categorical(rng, np.broadcast_to(d0_cdf, (n_episodes, mdp.n_states)))
    ret = np.zeros(n_episodes)
    disc = 1.0
    for _ in range(horizon):
        a = _categorical(rng, pi_cdf[s])
        ret += disc * mdp.reward[s, a]
        s = _categorical(rng, T_cdf[s, a])
        disc *= mdp.gamma
    return ret


def horizon_for_tolerance(gamma: float, tol: float = 1e-6) -> int:
    return int(math.ceil(math.log(tol) / math.log(gamma)))


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())
