"""Sub-optimal offline datasets at three quality tiers, and their JSONL files.

Behaviour policies are softmax policies over the true optimal action values:

* ``medium``: a single policy at temperature ``tau_med``;
* ``medium_replay``: an equal mixture over a temperature ladder running from
  near-uniform down to ``tau_med``, standing in for a replay buffer;
* ``medium_expert``: an equal mixture of the medium and a near-greedy policy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .extract import softmax_policy, value_iteration
from .mdp import TabularMdp, TabularPolicy, ValidationError

TIERS = ("medium_replay", "medium", "medium_expert", "custom")
H_COLLECT = 100


@dataclass(frozen=True)
class BehaviorTierConfig:
    tier: str
    temperatures: tuple
    weights: tuple
    seed: int = 0

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValidationError(f"unknown tier '{self.tier}', expected one of {TIERS}")
        if len(self.temperatures) != len(self.weights) or not self.weights:
            raise ValidationError("temperatures and weights must be non-empty and aligned")
        if any(t <= 0 for t in self.temperatures):
            raise ValidationError("temperatures must be > 0")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValidationError("weights must be non-negative and sum to 1")

    @classmethod
    def for_tier(cls, tier, tau_med=0.3, replay_ladder=(3.0, 1.0, 0.5, 0.3), tau_expert=0.05, seed=0):
        tier = tier.replace("-", "_")
        if tier == "medium":
            return cls(tier, (tau_med,), (1.0,), seed)
        if tier == "medium_replay":
            n = len(replay_ladder)
            return cls(tier, tuple(replay_ladder), (1.0 / n,) * n, seed)
        if tier == "medium_expert":
            return cls(tier, (tau_med, tau_expert), (0.5, 0.5), seed)
        raise ValidationError(f"unknown tier '{tier}'")


def build_behavior_policy(mdp: TabularMdp, tier_config: BehaviorTierConfig, q_opt=None):
    """List of ``(TabularPolicy, weight)`` mixture components."""
    if q_opt is None:
        q_opt, _ = value_iteration(mdp)
    return [
        (TabularPolicy(softmax_policy(q_opt, tau)), w)
        for tau, w in zip(tier_config.temperatures, tier_config.weights)
    ]


@dataclass(eq=False)
class OfflineDataset:
    """Multiset of ``(s, a, s', r)`` transitions stored column-wise."""

    s: np.ndarray
    a: np.ndarray
    sp: np.ndarray
    r: np.ndarray
    n_states: int
    n_actions: int
    tier: str = "custom"
    behavior_note: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.sp = np.asarray(self.sp, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=np.float64)
        n = len(self.s)
        if not (len(self.a) == len(self.sp) == len(self.r) == n):
            raise ValidationError("transition columns have different lengths")
        if n == 0:
            raise ValidationError("empty dataset")
        if self.tier not in TIERS:
            raise ValidationError(f"unknown tier '{self.tier}'")
        for name, col, bound in (("s", self.s, self.n_states), ("a", self.a, self.n_actions),
                                 ("sp", self.sp, self.n_states)):
            if col.min() < 0 or col.max() >= bound:
                raise ValidationError(f"{name} id out of range [0, {bound})")

    def __len__(self):
        return len(self.s)

    def __iter__(self):
        for i in range(len(self)):
            yield int(self.s[i]), int(self.a[i]), int(self.sp[i]), float(self.r[i])

    @property
    def transitions(self):
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return (
            (self.n_states, self.n_actions, self.tier, self.seed)
            == (other.n_states, other.n_actions, other.tier, other.seed)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.sp, other.sp)
            and np.array_equal(self.r, other.r)
        )

    def subset(self, idx) -> "OfflineDataset":
        idx = np.asarray(idx)
        return OfflineDataset(self.s[idx], self.a[idx], self.sp[idx], self.r[idx],
                              self.n_states, self.n_actions, self.tier, self.behavior_note, self.seed)

    def check_against(self, mdp: TabularMdp) -> None:
        """Raise unless every transition is possible under ``mdp`` with the right reward."""
        if (self.n_states, self.n_actions) != (mdp.n_states, mdp.n_actions):
            raise ValidationError(
                f"dataset has n_states={self.n_states}, n_actions={self.n_actions} but MDP has "
                f"n_states={mdp.n_states}, n_actions={mdp.n_actions}"
            )
        if not np.all(mdp.transition[self.s, self.a, self.sp] > 0):
            raise ValidationError("dataset contains an impossible transition")
        if not np.array_equal(mdp.reward[self.s, self.a], self.r):
            raise ValidationError("dataset rewards differ from the MDP's")


def _rollout_block(rng, mdp, probs, n_steps, h_collect):
    """Episodes of ``h_collect`` steps from d0, simulated in parallel."""
    n_ep = -(-n_steps // h_collect)
    pi_cdf = np.cumsum(probs, axis=1)
    T_cdf = np.cumsum(mdp.transition, axis=2)
    d0_cdf = np.cumsum(mdp.initial_dist)

    def draw(cdf):
        u = rng.random(cdf.shape[0])
        return np.minimum((cdf < u[:, None]).sum(axis=1), cdf.shape[1] - 1)

    cols = np.empty((3, n_ep, h_collect), dtype=np.int64)
    s = draw(np.broadcast_to(d0_cdf, (n_ep, mdp.n_states)))
    for t in range(h_collect):
        a = draw(pi_cdf[s])
        sp = draw(T_cdf[s, a])
        cols[0, :, t], cols[1, :, t], cols[2, :, t] = s, a, sp
        s = sp
    flat = cols.reshape(3, -1)[:, :n_steps]
    return flat[0], flat[1], flat[2]


def component_shares(weights, n_transitions):
    shares = [int(np.floor(w * n_transitions)) for w in weights]
    shares[-1] += n_transitions - sum(shares)
    return shares


def collect_dataset(mdp, behavior_components, n_transitions, seed, tier="custom",
                    h_collect=H_COLLECT) -> OfflineDataset:
    """Roll out each mixture component for its share of ``n_transitions`` steps.

    Episodes start from d0 and restart every ``h_collect`` steps.
    """
    if n_transitions < 1:
        raise ValidationError("n_transitions must be >= 1")
    rng = np.random.default_rng(seed)
    shares = component_shares([w for _, w in behavior_components], n_transitions)
    S, A, SP = [], [], []
    for (policy, _), n in zip(behavior_components, shares):
        if n == 0:
            continue
        s, a, sp = _rollout_block(rng, mdp, policy.probs, n, h_collect)
        S.append(s), A.append(a), SP.append(sp)
    s, a, sp = np.concatenate(S), np.concatenate(A), np.concatenate(SP)
    note = f"{len(behavior_components)} component(s), h_collect={h_collect}"
    return OfflineDataset(s, a, sp, mdp.reward[s, a], mdp.n_states, mdp.n_actions,
                          tier=tier, behavior_note=note, seed=int(seed))


def expected_collection_frequencies(mdp, behavior_components, n_transitions, h_collect=H_COLLECT):
    """Exact expected (s, a) frequencies of :func:`collect_dataset`.

    Built from per-step state-action distributions, so it serves as an
    independent check on the sampler.
    """
    from .mdp import compute_t_step_distributions

    shares = component_shares([w for _, w in behavior_components], n_transitions)
    freq = np.zeros((mdp.n_states, mdp.n_actions))
    for (policy, _), n in zip(behavior_components, shares):
        if n == 0:
            continue
        steps = compute_t_step_distributions(mdp, policy, h_collect - 1)
        full, rem = divmod(n, h_collect)
        for t, (_, rho_t) in enumerate(steps):
            freq += (full + (t < rem)) * rho_t
    return freq / n_transitions


def make_tier_dataset(mdp, tier, n_transitions, seed, q_opt=None, **tier_kwargs) -> OfflineDataset:
    cfg = BehaviorTierConfig.for_tier(tier, seed=seed, **tier_kwargs)
    comps = build_behavior_policy(mdp, cfg, q_opt=q_opt)
    ds = collect_dataset(mdp, comps, n_transitions, seed, tier=cfg.tier)
    ds.behavior_note = f"tier={cfg.tier} temperatures={cfg.temperatures} weights={cfg.weights}"
    return ds


def save_dataset(dataset: OfflineDataset, path) -> None:
    header = {"meta": {"tier": dataset.tier, "seed": dataset.seed,
                       "n_states": dataset.n_states, "n_actions": dataset.n_actions}}
    if dataset.behavior_note:
        header["meta"]["behavior_note"] = dataset.behavior_note
    if dataset.meta:
        header["meta"]["config"] = dataset.meta
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s, a, sp, r in dataset:
            fh.write(json.dumps({"s": s, "a": a, "sp": sp, "r": r}) + "\n")


def load_dataset(path) -> OfflineDataset:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty dataset")
    try:
        meta = json.loads(lines[0])["meta"]
        S, A = int(meta["n_states"]), int(meta["n_actions"])
        tier, seed = meta["tier"], int(meta["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"line 1: malformed header ({exc!r})") from None
    if len(lines) == 1:
        raise ValidationError("empty dataset")
    cols = {"s": [], "a": [], "sp": [], "r": []}
    bounds = {"s": S, "a": A, "sp": S}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        for key in ("s", "a", "sp", "r"):
            if key not in rec:
                raise ValidationError(f"line {lineno}: missing field '{key}'")
        for key, bound in bounds.items():
            v = rec[key]
            if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v < bound:
                raise ValidationError(f"line {lineno}: field '{key}'={v!r} out of range [0, {bound})")
        if not isinstance(rec["r"], (int, float)) or isinstance(rec["r"], bool):
            raise ValidationError(f"line {lineno}: field 'r' must be a number")
        for key in cols:
            cols[key].append(rec[key])
    ds = OfflineDataset(cols["s"], cols["a"], cols["sp"], cols["r"], S, A, tier=tier,
                        behavior_note=meta.get("behavior_note", ""), seed=seed)
    ds.meta = meta.get("config", {})
    return ds
