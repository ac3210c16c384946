"""The learnable synthetic behavioural dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

INIT_MARGIN = 4.0


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class SyntheticDataset:
    """``N_syn`` pairs of dense state vectors and action-target logits.

    Targets are ``softmax(target_logits)`` so they stay on the simplex while
    the logits are optimised freely.
    """

    state_vectors: np.ndarray
    target_logits: np.ndarray

    def __post_init__(self):
        self.state_vectors = np.array(self.state_vectors, dtype=np.float64)
        self.target_logits = np.array(self.target_logits, dtype=np.float64)
        if self.state_vectors.ndim != 2 or self.target_logits.ndim != 2:
            raise ValueError("state_vectors and target_logits must be matrices")
        if len(self.state_vectors) < 1 or len(self.state_vectors) != len(self.target_logits):
            raise ValueError("need N_syn >= 1 aligned rows")
        if not (np.all(np.isfinite(self.state_vectors)) and np.all(np.isfinite(self.target_logits))):
            raise ValueError("synthetic data must be finite")

    @property
    def n_syn(self) -> int:
        return len(self.state_vectors)

    @property
    def targets(self) -> np.ndarray:
        return softmax(self.target_logits)

    def copy(self) -> "SyntheticDataset":
        return SyntheticDataset(self.state_vectors.copy(), self.target_logits.copy())

    @classmethod
    def from_pairs(cls, states, actions, n_states, n_actions, margin=INIT_MARGIN):
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        X = np.zeros((len(states), n_states))
        X[np.arange(len(states)), states] = 1.0
        L = np.zeros((len(actions), n_actions))
        L[np.arange(len(actions)), actions] = margin
        return cls(X, L)

    def to_dict(self, config=None) -> dict:
        doc = {
            "state_vectors": self.state_vectors.tolist(),
            "target_logits": self.target_logits.tolist(),
            "targets": self.targets.tolist(),
        }
        if config is not None:
            doc["config"] = config
        return doc

    @classmethod
    def from_dict(cls, doc) -> "SyntheticDataset":
        if "target_logits" in doc:
            logits = doc["target_logits"]
        else:
            logits = np.log(np.maximum(np.asarray(doc["targets"], dtype=float), 1e-300))
        return cls(doc["state_vectors"], logits)

    def save(self, path, config=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(config), fh)

    @classmethod
    def load(cls, path) -> "SyntheticDataset":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_synthetic(dataset, n_syn, seed, margin=INIT_MARGIN) -> SyntheticDataset:
    """Sample ``n_syn`` (s, a) pairs from the offline data as one-hot rows."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(dataset), size=n_syn)
    return SyntheticDataset.from_pairs(dataset.s[idx], dataset.a[idx],
                                       dataset.n_states, dataset.n_actions, margin)
