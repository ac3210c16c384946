"""Exact numerical checks of the performance-gap identity and bounds.

For a policy pair ``(pi, pi*)`` on a finite MDP, with ``q*`` the action
values of ``pi*`` and ``d_pi`` the discounted state distribution of ``pi``:

* identity:  ``J(pi*) - J(pi) = E_{d_pi}[sum_a q*(s,a) (pi*(a|s) - pi(a|s))] / (1 - gamma)``
* weighted bound:  ``|J(pi*) - J(pi)| <= E_{d_pi}[sum_a q* |pi* - pi|] / (1 - gamma)``
* TV bound:  ``|J(pi*) - J(pi)| <= 2 R_max E_ref[TV(pi*, pi)] / (1 - gamma)^2``
  with the reference distribution either ``d_pi*`` or ``d_pi``
* comparison:  ``E_{d_pi}[sum_a q* |pi* - pi|] <= R_max / (1 - gamma) E_{d_pi}[sum_a |pi* - pi|]``

All expectations are inner products with exact occupancy measures.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .envs import make_random_mdp
from .mdp import TabularMdp, TabularPolicy, as_policy, occupancy_measures, policy_evaluation

SLACK = 1e-10
REFERENCES = ("d_pi_star", "d_pi")


@dataclass
class BoundCheckReport:
    gap: float
    epsilon_tv: float
    epsilon_weighted: float
    thm1_bound: float
    cor1_bound: float
    identity_residual: float
    reference: str
    thm1_holds: bool
    cor1_holds: bool
    eq8_holds: bool

    def to_dict(self):
        return asdict(self)


def _parts(mdp, pi, pi_star):
    pi, pi_star = as_policy(pi), as_policy(pi_star)
    vp_star = policy_evaluation(mdp, pi_star)
    vp = policy_evaluation(mdp, pi)
    d_pi = occupancy_measures(mdp, pi).d
    return pi, pi_star, vp_star, vp, d_pi


def performance_gap_identity(mdp: TabularMdp, pi, pi_star) -> dict:
    """Both sides of the identity and their absolute difference."""
    pi, pi_star, vp_star, vp, d_pi = _parts(mdp, pi, pi_star)
    lhs = vp_star.j - vp.j
    inner = (vp_star.q * (pi_star.probs - pi.probs)).sum(axis=1)
    rhs = float(d_pi @ inner) / (1.0 - mdp.gamma)
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs)}


def weighted_epsilon(mdp, pi, pi_star) -> float:
    pi, pi_star, vp_star, _, d_pi = _parts(mdp, pi, pi_star)
    return float(d_pi @ (vp_star.q * np.abs(pi_star.probs - pi.probs)).sum(axis=1))


def check_corollary1(mdp: TabularMdp, pi, pi_star):
    """``(gap, bound, holds)`` for the action-value weighted bound."""
    pi, pi_star, vp_star, vp, d_pi = _parts(mdp, pi, pi_star)
    gap = abs(vp_star.j - vp.j)
    eps_w = float(d_pi @ (vp_star.q * np.abs(pi_star.probs - pi.probs)).sum(axis=1))
    bound = eps_w / (1.0 - mdp.gamma)
    return gap, bound, gap <= bound + SLACK


def tv_epsilon(mdp, pi, pi_star, reference="d_pi_star") -> float:
    pi, pi_star = as_policy(pi), as_policy(pi_star)
    if reference == "d_pi_star":
        d = occupancy_measures(mdp, pi_star).d
    elif reference == "d_pi":
        d = occupancy_measures(mdp, pi).d
    else:
        raise ValueError(f"reference must be one of {REFERENCES}")
    tv = 0.5 * np.abs(pi_star.probs - pi.probs).sum(axis=1)
    return float(d @ tv)


def check_theorem1(mdp: TabularMdp, pi, pi_star, reference="d_pi_star"):
    """``(gap, bound, holds)`` for the TV bound under the chosen reference."""
    gap = abs(policy_evaluation(mdp, pi_star).j - policy_evaluation(mdp, pi).j)
    eps = tv_epsilon(mdp, pi, pi_star, reference)
    bound = 2.0 * mdp.r_max * eps / (1.0 - mdp.gamma) ** 2
    return gap, bound, gap <= bound + SLACK


def check_eq8(mdp: TabularMdp, pi, pi_star):
    """``(epsilon_weighted, rhs, holds)`` for the q* <= R_max/(1-gamma) comparison."""
    pi, pi_star, vp_star, _, d_pi = _parts(mdp, pi, pi_star)
    diff = np.abs(pi_star.probs - pi.probs)
    lhs = float(d_pi @ (vp_star.q * diff).sum(axis=1))
    rhs = mdp.r_max / (1.0 - mdp.gamma) * float(d_pi @ diff.sum(axis=1))
    return lhs, rhs, lhs <= rhs + SLACK


def bound_report(mdp, pi, pi_star, reference="d_pi_star") -> BoundCheckReport:
    gap, cor1, cor1_ok = check_corollary1(mdp, pi, pi_star)
    _, thm1, thm1_ok = check_theorem1(mdp, pi, pi_star, reference)
    eps_w, _, eq8_ok = check_eq8(mdp, pi, pi_star)
    return BoundCheckReport(
        gap=gap,
        epsilon_tv=tv_epsilon(mdp, pi, pi_star, reference),
        epsilon_weighted=eps_w,
        thm1_bound=thm1,
        cor1_bound=cor1,
        identity_residual=performance_gap_identity(mdp, pi, pi_star)["residual"],
        reference=reference,
        thm1_holds=thm1_ok,
        cor1_holds=cor1_ok,
        eq8_holds=eq8_ok,
    )


def random_policy(rng, n_states, n_actions) -> TabularPolicy:
    p = rng.dirichlet(np.ones(n_actions), size=n_states)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


def random_triple(seed, gamma=None, max_states=20, max_actions=5):
    """Random ``(mdp, pi, pi_star)`` with Dirichlet(1) policy rows.

    Sizes, branching and reward sparsity are drawn from ``seed``; ``gamma``
    defaults to a draw from {0.9, 0.99}. The same seed with a different
    ``gamma`` gives the same structure.
    """
    rng = np.random.default_rng(seed)
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    branching = int(rng.integers(1, S + 1))
    sparsity = float(rng.uniform(0.0, 0.9))
    g = float(rng.choice([0.9, 0.99]))
    mdp = make_random_mdp(S, A, branching, sparsity, g if gamma is None else gamma, int(rng.integers(2**31)))
    return mdp, random_policy(rng, S, A), random_policy(rng, S, A)


def episodic_triple(seed, gamma=None, max_states=20, max_actions=5):
    """Like :func:`random_triple` with an extra absorbing zero-reward state.

    Every live (s, a) ends the episode with a probability drawn from
    [0.05, 0.3], so values stay bounded as ``gamma`` approaches 1.
    """
    mdp, pi, pi_star = random_triple(seed, gamma, max_states - 1, max_actions)
    rng = np.random.default_rng([seed, 1])
    S, A = mdp.n_states, mdp.n_actions
    stop = rng.uniform(0.05, 0.3, size=(S, A, 1))
    T = np.zeros((S + 1, A, S + 1))
    T[:S, :, :S] = mdp.transition * (1.0 - stop)
    T[:S, :, S] = stop[..., 0]
    T[S, :, S] = 1.0
    r = np.vstack([mdp.reward, np.zeros((1, A))])
    d0 = np.append(mdp.initial_dist, 0.0)
    extra = random_policy(rng, 2, A).probs
    grow = lambda p, row: TabularPolicy(np.vstack([p.probs, row]))
    return TabularMdp(T, r, mdp.gamma, d0), grow(pi, extra[:1]), grow(pi_star, extra[1:])


def _tightness_mdp(rng, n_live, n_actions, gamma):
    # the last action of every live state leads to an absorbing zero-reward sink
    S = n_live + 1
    sink = n_live
    T = np.zeros((S, n_actions, S))
    r = np.zeros((S, n_actions))
    T[:n_live, :-1, :n_live] = rng.dirichlet(np.ones(n_live), size=(n_live, n_actions - 1))
    r[:n_live, :-1] = rng.uniform(0.1, 1.0, size=(n_live, n_actions - 1))
    T[:n_live, -1, sink] = 1.0
    T[sink, :, sink] = 1.0
    T /= T.sum(axis=2, keepdims=True)
    d0 = np.zeros(S)
    d0[:n_live] = rng.dirichlet(np.ones(n_live))
    return TabularMdp(T, r, gamma, d0)


def construct_tightness_case(seed, n_live=6, n_actions=4, gamma=0.9):
    """A pair for which the weighted bound holds with equality.

    ``pi*`` never takes the sink action; ``pi`` moves a fraction of every
    live state's mass from ``pi*``'s actions onto the sink action, whose value
    under ``pi*`` is exactly zero. Returns ``(mdp, pi, pi_star)``.
    """
    rng = np.random.default_rng(seed)
    mdp = _tightness_mdp(rng, n_live, n_actions, gamma)
    S, A = mdp.n_states, mdp.n_actions
    star = np.zeros((S, A))
    star[:n_live, :-1] = rng.dirichlet(np.ones(A - 1), size=n_live)
    star[n_live] = 1.0 / A
    lam = rng.uniform(0.1, 0.5, size=n_live)
    pi = star.copy()
    pi[:n_live] *= (1.0 - lam)[:, None]
    pi[:n_live, -1] += lam
    return mdp, TabularPolicy(pi), TabularPolicy(star)


def perturb_tightness_case(mdp, pi_star, lam=0.3):
    """Shift mass onto a positive-value action instead, which breaks equality."""
    star = as_policy(pi_star).probs
    n_live = mdp.n_states - 1
    pi = star.copy()
    for s in range(n_live):
        a = int(np.argmin(star[s, :-1]))  # pi* puts less than all its mass here
        pi[s] *= 1.0 - lam
        pi[s, a] += lam
    return TabularPolicy(pi)


def verify_theory(n_identity=100, n_bounds=1000, n_tight=20, n_ratio=100, seed=0) -> dict:
    """Run every check on random and constructed instances; returns a JSON-able report."""
    residuals = []
    for i in range(n_identity):
        mdp, pi, pi_star = random_triple(seed + i)
        residuals.append(performance_gap_identity(mdp, pi, pi_star)["residual"])

    violations = {"cor1": 0, "thm1_d_pi_star": 0, "thm1_d_pi": 0, "eq8": 0}
    for i in range(n_bounds):
        mdp, pi, pi_star = random_triple(seed + 10_000 + i)
        violations["cor1"] += not check_corollary1(mdp, pi, pi_star)[2]
        violations["thm1_d_pi_star"] += not check_theorem1(mdp, pi, pi_star, "d_pi_star")[2]
        violations["thm1_d_pi"] += not check_theorem1(mdp, pi, pi_star, "d_pi")[2]
        violations["eq8"] += not check_eq8(mdp, pi, pi_star)[2]

    tight_err, perturbed_slack = [], []
    for i in range(n_tight):
        mdp, pi, pi_star = construct_tightness_case(seed + i)
        gap, bound, _ = check_corollary1(mdp, pi, pi_star)
        tight_err.append(abs(gap - bound))
        pi_p = perturb_tightness_case(mdp, pi_star)
        gap_p, bound_p, _ = check_corollary1(mdp, pi_p, pi_star)
        perturbed_slack.append(bound_p - gap_p)

    ratios = {g: discount_ratio(g, n_ratio, seed) for g in (0.9, 0.99)}

    checks = {
        "identity": max(residuals) <= 1e-8,
        "bounds": sum(violations.values()) == 0,
        "tightness": max(tight_err) <= 1e-8 and min(perturbed_slack) >= 1e-6,
        "discount_separation": ratios[0.99] > ratios[0.9],
    }
    return {
        "identity": {"n": n_identity, "max_residual": max(residuals), "mean_residual": float(np.mean(residuals))},
        "bounds": {"n": n_bounds, "violations": violations, "slack": SLACK},
        "tightness": {"n": n_tight, "max_abs_gap_minus_bound": max(tight_err),
                      "min_perturbed_slack": min(perturbed_slack)},
        "discount_separation": {"n": n_ratio, "reference": "d_pi", "triples": "episodic",
                                "mean_thm1_over_cor1": {str(k): v for k, v in ratios.items()}},
        "checks": checks,
        "passed": all(checks.values()),
    }


def discount_ratio(gamma, n=100, seed=0, reference="d_pi", episodic=True) -> float:
    """Mean TV-bound / weighted-bound ratio over ``n`` random triples at ``gamma``.

    Triples share their structure across ``gamma`` for a fixed seed. With
    ``episodic=False`` the MDPs are recurrent and ``q*`` itself grows like
    ``1/(1-gamma)``, which cancels the separation.
    """
    make = episodic_triple if episodic else random_triple
    out = []
    for i in range(n):
        mdp, pi, pi_star = make(seed + 20_000 + i, gamma=gamma)
        _, cor1, _ = check_corollary1(mdp, pi, pi_star)
        _, thm1, _ = check_theorem1(mdp, pi, pi_star, reference)
        if cor1 > 0:
            out.append(thm1 / cor1)
    return float(np.mean(out))
