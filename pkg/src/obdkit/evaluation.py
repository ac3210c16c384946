"""Exact evaluation of synthetic datasets.

Policies are trained on the synthetic data with plain BC, turned into
tabular policies by querying every one-hot state, and scored by exact
expected return. Scores are normalised against the uniform policy (0) and the
optimal policy of the true MDP (100).
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .extract import value_iteration
from .mdp import TabularMdp, TabularPolicy, policy_evaluation
from .policy import MlpArchitecture, OptimizerSpec, PolicyParams, forward, init_params, train_bc
from .synthetic import SyntheticDataset


# logit margin at which softmax targets equal one-hots to ~1e-21
ONE_HOT_MARGIN = 50.0


@dataclass(frozen=True)
class EvalProtocol:
    steps: int = 500
    optimizer: OptimizerSpec = OptimizerSpec("gd", lr=0.1)
    hidden: tuple = (32, 32)
    residual: bool = False
    n_seeds: int = 5
    seed_offset: int = 0
    ensemble_k: int = 10

    def __post_init__(self):
        if self.steps < 0 or self.n_seeds < 1 or self.ensemble_k < 1:
            raise ValueError("protocol counts must be positive")

    def arch(self, n_states, n_actions) -> MlpArchitecture:
        return MlpArchitecture((n_states,) + tuple(self.hidden) + (n_actions,), self.residual)

    @property
    def seeds(self):
        return tuple(range(self.seed_offset, self.seed_offset + self.n_seeds))


@dataclass
class EvalResult:
    raw_returns: list
    normalized: list
    arch_label: str
    optimizer_label: str
    seeds: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.normalized))

    @property
    def std(self) -> float:
        return float(np.std(self.normalized))

    def summary(self) -> dict:
        return {
            "arch": self.arch_label,
            "optimizer": self.optimizer_label,
            "return_mean": self.mean,
            "return_std": self.std,
            "raw_returns": list(self.raw_returns),
            "normalized": list(self.normalized),
            "seeds": list(self.seeds),
        }


def policy_from_network(params: PolicyParams, mdp: TabularMdp) -> TabularPolicy:
    if params.arch.widths[0] != mdp.n_states or params.arch.widths[-1] != mdp.n_actions:
        raise ValueError(
            f"network maps {params.arch.widths[0]} -> {params.arch.widths[-1]} but MDP has "
            f"{mdp.n_states} states and {mdp.n_actions} actions"
        )
    probs = forward(params, np.eye(mdp.n_states))
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def normalized_return(j, j_random, j_expert) -> float:
    if not j_expert > j_random:
        raise ValueError(f"degenerate normalisation: expert return {j_expert} <= random return {j_random}")
    return 100.0 * (j - j_random) / (j_expert - j_random)


@lru_cache(maxsize=64)
def reference_returns(mdp: TabularMdp) -> tuple[float, float]:
    """``(J(uniform), J(optimal))`` on the true MDP."""
    j_rand = policy_evaluation(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions)).j
    _, greedy = value_iteration(mdp)
    return j_rand, policy_evaluation(mdp, greedy).j


def train_on_synthetic(syn: SyntheticDataset, arch: MlpArchitecture, protocol: EvalProtocol, seed) -> PolicyParams:
    return train_bc(init_params(arch, seed), syn.state_vectors, syn.targets, protocol.steps, protocol.optimizer)


def _seed_job(args):
    syn, mdp, protocol, seed = args
    arch = protocol.arch(mdp.n_states, mdp.n_actions)
    pi = policy_from_network(train_on_synthetic(syn, arch, protocol, seed), mdp)
    return policy_evaluation(mdp, pi).j


def _map(fn, jobs, n_jobs):
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def evaluate_synthetic(syn: SyntheticDataset, mdp: TabularMdp, protocol: EvalProtocol = EvalProtocol(),
                       n_jobs=1) -> EvalResult:
    j_rand, j_exp = reference_returns(mdp)
    seeds = protocol.seeds
    raw = _map(_seed_job, [(syn, mdp, protocol, s) for s in seeds], n_jobs)
    arch = protocol.arch(mdp.n_states, mdp.n_actions)
    return EvalResult(raw, [normalized_return(j, j_rand, j_exp) for j in raw],
                      arch.label, protocol.optimizer.label, list(seeds))


def ensemble_policy(syn: SyntheticDataset, mdp: TabularMdp, protocol: EvalProtocol, seeds) -> TabularPolicy:
    arch = protocol.arch(mdp.n_states, mdp.n_actions)
    rows = [policy_from_network(train_on_synthetic(syn, arch, protocol, s), mdp).probs for s in seeds]
    avg = np.mean(rows, axis=0)
    return TabularPolicy(avg / avg.sum(axis=1, keepdims=True))


def ensemble_evaluate(syn: SyntheticDataset, mdp: TabularMdp, protocol: EvalProtocol = EvalProtocol(),
                      k=None, n_trials=None) -> EvalResult:
    """Average the action probabilities of ``k`` networks trained with distinct seeds.

    Trial ``i`` uses seeds ``seed_offset + i*k ... + (i+1)*k - 1``; the result
    holds one exact return per trial.
    """
    k = protocol.ensemble_k if k is None else k
    n_trials = protocol.n_seeds if n_trials is None else n_trials
    j_rand, j_exp = reference_returns(mdp)
    raw, used = [], []
    for i in range(n_trials):
        seeds = [protocol.seed_offset + i * k + m for m in range(k)]
        raw.append(policy_evaluation(mdp, ensemble_policy(syn, mdp, protocol, seeds)).j)
        used.append(seeds[0])
    arch = protocol.arch(mdp.n_states, mdp.n_actions)
    return EvalResult(raw, [normalized_return(j, j_rand, j_exp) for j in raw],
                      f"{arch.label}-ensemble{k}", protocol.optimizer.label, used)


def single_policy_trials(syn, mdp, protocol: EvalProtocol = EvalProtocol(), k=None, n_trials=None) -> EvalResult:
    """Non-ensembled counterpart of :func:`ensemble_evaluate` over the same seeds."""
    k = protocol.ensemble_k if k is None else k
    n_trials = protocol.n_seeds if n_trials is None else n_trials
    seeds = [protocol.seed_offset + i * k + m for i in range(n_trials) for m in range(k)]
    j_rand, j_exp = reference_returns(mdp)
    raw = [_seed_job((syn, mdp, protocol, s)) for s in seeds]
    arch = protocol.arch(mdp.n_states, mdp.n_actions)
    return EvalResult(raw, [normalized_return(j, j_rand, j_exp) for j in raw],
                      arch.label, protocol.optimizer.label, seeds)


def random_selection_baseline(dataset, n_syn, mdp: TabularMdp, protocol: EvalProtocol = EvalProtocol(),
                              n_repeats=10, seed=0) -> EvalResult:
    """Score ``n_syn`` real (s, a) pairs picked uniformly from the offline data.

    Each repeat draws a fresh subset and trains one network per protocol
    seed; the result holds the per-repeat mean.
    """
    normalized_return(0.0, *reference_returns(mdp))  # fail fast on a degenerate MDP
    rng = np.random.default_rng(seed)
    raw, norm = [], []
    for _ in range(n_repeats):
        idx = rng.choice(len(dataset), size=n_syn, replace=False)
        syn = SyntheticDataset.from_pairs(dataset.s[idx], dataset.a[idx], mdp.n_states, mdp.n_actions,
                                          margin=ONE_HOT_MARGIN)
        res = evaluate_synthetic(syn, mdp, protocol)
        raw.append(float(np.mean(res.raw_returns)))
        norm.append(res.mean)
    arch = protocol.arch(mdp.n_states, mdp.n_actions)
    return EvalResult(raw, norm, arch.label, protocol.optimizer.label, list(range(n_repeats)))


ARCH_VARIANTS = {
    "2-layer": dict(hidden=(), residual=False),
    "3-layer": dict(hidden=(32,), residual=False),
    "4-layer": dict(hidden=(32, 32), residual=False),
    "5-layer": dict(hidden=(32, 32, 32), residual=False),
    "6-layer": dict(hidden=(32, 32, 32, 32), residual=False),
    "residual": dict(hidden=(32, 32), residual=True),
}

OPTIMIZER_VARIANTS = {
    "SGD": OptimizerSpec("gd", lr=0.1),
    "SGDm": OptimizerSpec("gd_momentum", lr=0.1, momentum=0.9),
    "Adam": OptimizerSpec("adam_style", lr=1e-3),
    "AdamW": OptimizerSpec("adamw_style", lr=1e-3, weight_decay=1e-2),
}


def cross_architecture(syn, mdp, protocol: EvalProtocol = EvalProtocol(), variants=ARCH_VARIANTS) -> dict:
    """Evaluate under each architecture; values are ``(result, delta vs protocol default)``."""
    base = evaluate_synthetic(syn, mdp, protocol).mean
    out = {}
    for name, kw in variants.items():
        res = evaluate_synthetic(syn, mdp, replace(protocol, **kw))
        out[name] = (res, res.mean - base)
    return out


def cross_optimizer(syn, mdp, protocol: EvalProtocol = EvalProtocol(), variants=OPTIMIZER_VARIANTS) -> dict:
    base = evaluate_synthetic(syn, mdp, protocol).mean
    out = {}
    for name, opt in variants.items():
        res = evaluate_synthetic(syn, mdp, replace(protocol, optimizer=opt))
        out[name] = (res, res.mean - base)
    return out


def write_results_csv(rows: dict, path) -> None:
    """``rows`` maps a label to an :class:`EvalResult`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "arch", "optimizer", "return_mean", "return_std", "n"])
        for label, res in rows.items():
            w.writerow([label, res.arch_label, res.optimizer_label, repr(res.mean), repr(res.std),
                        len(res.normalized)])


def write_results_json(rows: dict, path, config=None) -> None:
    doc = {"results": {k: v.summary() for k, v in rows.items()}}
    if config is not None:
        doc["config"] = config
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def protocol_to_dict(protocol: EvalProtocol) -> dict:
    return asdict(protocol)
