"""Tabular stand-in for the offline RL step: recover (pi*, q*) from data.

The dataset is turned into a pessimistic empirical MDP (low-count state-action
pairs become zero-reward self-loops) and solved by value iteration.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .mdp import TabularMdp, TabularPolicy


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    gamma: float = 0.9
    pessimism_penalty: float | None = None  # None: the dataset's max reward
    count_threshold: int = 1
    value_iteration_tol: float = 1e-10
    max_iterations: int = 100_000
    softmax_temperature: float = 0.05

    def __post_init__(self):
        if self.value_iteration_tol <= 0:
            raise ValueError("value_iteration_tol must be > 0")
        if self.pessimism_penalty is not None and self.pessimism_penalty < 0:
            raise ValueError("pessimism_penalty must be >= 0")
        if self.count_threshold < 1:
            raise ValueError("count_threshold must be >= 1")
        if self.softmax_temperature < 0:
            raise ValueError("softmax_temperature must be >= 0")


def softmax_policy(q: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise ``softmax(q / temperature)``; temperature 0 gives greedy one-hots."""
    q = np.asarray(q, dtype=float)
    if temperature == 0:
        probs = np.zeros_like(q)
        probs[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
        return probs
    z = (q - q.max(axis=1, keepdims=True)) / temperature
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def visit_counts(dataset) -> np.ndarray:
    counts = np.zeros((dataset.n_states, dataset.n_actions), dtype=np.int64)
    np.add.at(counts, (dataset.s, dataset.a), 1)
    return counts


def estimate_empirical_mdp(dataset, config: ExtractionConfig = ExtractionConfig()) -> TabularMdp:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    S, A = dataset.n_states, dataset.n_actions
    counts = visit_counts(dataset)
    next_counts = np.zeros((S, A, S))
    np.add.at(next_counts, (dataset.s, dataset.a, dataset.sp), 1.0)
    reward_sum = np.zeros((S, A))
    np.add.at(reward_sum, (dataset.s, dataset.a), dataset.r)

    trusted = counts >= config.count_threshold
    safe = np.maximum(counts, 1)
    T = np.where(trusted[:, :, None], next_counts / safe[:, :, None], 0.0)
    for s, a in zip(*np.nonzero(~trusted)):
        T[s, a, s] = 1.0
    # renormalise so rows sum to one to machine precision
    T /= T.sum(axis=2, keepdims=True)

    penalty = config.pessimism_penalty
    if penalty is None:
        penalty = float(dataset.r.max())
    r = reward_sum / safe - penalty * (~trusted)
    r = np.maximum(r, 0.0)

    d0 = np.full(S, 1.0 / S)
    return TabularMdp(T, r, config.gamma, d0)


def value_iteration(mdp: TabularMdp, tol=1e-10, max_iter=100_000):
    """Optimal action values by Bellman optimality iteration.

    Stops once successive iterates differ by at most ``tol`` in sup norm.
    Returns ``(q, greedy_policy)`` with ties broken toward the lowest action.
    """
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        q_next = mdp.reward + mdp.gamma * mdp.transition @ q.max(axis=1)
        if np.abs(q_next - q).max() <= tol:
            q = q_next
            break
        q = q_next
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} iterations")
    return q, TabularPolicy(softmax_policy(q, 0.0))


@dataclass(frozen=True, eq=False)
class Extraction:
    pi_star: TabularPolicy
    q_star: np.ndarray
    config: ExtractionConfig

    def to_dict(self) -> dict:
        return {
            "pi_star": self.pi_star.probs.tolist(),
            "q_star": self.q_star.tolist(),
            "config": asdict(self.config),
        }

    @classmethod
    def from_dict(cls, doc) -> "Extraction":
        return cls(
            TabularPolicy(doc["pi_star"]),
            np.asarray(doc["q_star"], dtype=float),
            ExtractionConfig(**doc["config"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Extraction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __iter__(self):
        # allows ``pi_star, q_star = extract(...)``
        yield self.pi_star
        yield self.q_star


def extract(dataset, config: ExtractionConfig = ExtractionConfig()) -> Extraction:
    emp = estimate_empirical_mdp(dataset, config)
    q_star, _ = value_iteration(emp, config.value_iteration_tol, config.max_iterations)
    probs = softmax_policy(q_star, config.softmax_temperature)
    # states never seen in the data fall back to action 0
    unseen = visit_counts(dataset).sum(axis=1) == 0
    probs[unseen] = 0.0
    probs[unseen, 0] = 1.0
    return Extraction(TabularPolicy(probs), q_star, config)
