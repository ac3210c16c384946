"""End-to-end acceptance criteria.

Each test prints one PASS/FAIL line, collected again in the terminal
summary. The distillation runs behind criteria 6-9 are shared through a
session cache; expect roughly half an hour on one core.
"""
import time

import numpy as np
import pytest

from obdkit.datasets import load_dataset, make_tier_dataset, save_dataset
from obdkit.distill import DistillConfig, distill, meta_gradient, outer_loss_av_pbc
from obdkit.envs import make_gridworld, make_random_mdp
from obdkit.evaluation import EvalProtocol, ensemble_evaluate, random_selection_baseline, single_policy_trials
from obdkit.extract import Extraction, ExtractionConfig, extract
from obdkit.mdp import (TabularPolicy, horizon_for_tolerance, load_mdp, occupancy_measures, policy_evaluation,
                        policy_matrices, sample_returns, save_mdp)
from obdkit.policy import MlpArchitecture, OptimizerSpec, PolicyParams, init_params
from obdkit.synthetic import SyntheticDataset, init_synthetic
from obdkit.theory import (check_corollary1, check_eq8, check_theorem1, construct_tightness_case,
                           discount_ratio, perturb_tightness_case, performance_gap_identity, random_triple)

pytestmark = pytest.mark.slow

# benchmark: 5x5 gridworld, medium-replay data, outer step size tuned once and shared by all objectives
OUTER_LR = 10.0
PROTOCOL = EvalProtocol()


@pytest.fixture(scope="session")
def bench():
    mdp = make_gridworld(5, 5, goal_reward=1.0, slip_prob=0.1, gamma=0.9)
    ds = make_tier_dataset(mdp, "medium_replay", 100_000, seed=0)
    ex = extract(ds, ExtractionConfig(gamma=mdp.gamma))
    return mdp, ds, ex


@pytest.fixture(scope="session")
def runs(bench):
    mdp, ds, ex = bench
    cache = {}

    def get(objective, n_syn=16, seed=0):
        key = (objective, n_syn, seed)
        if key not in cache:
            cfg = DistillConfig(objective=objective, n_syn=n_syn, seed=seed, outer_lr=OUTER_LR)
            t0 = time.perf_counter()
            rep = distill(mdp, ds, ex.pi_star, ex.q_star, cfg, protocol=PROTOCOL)
            cache[key] = (rep, time.perf_counter() - t0)
        return cache[key]
    return get


def final_std(rep, last=5):
    return float(np.mean([r.return_std for r in rep.records[-last:]]))


# -- 1-4: theory ------------------------------------------------------------

def test_criterion_1_identity(verdict):
    t0 = time.perf_counter()
    residuals = []
    gammas = set()
    for seed in range(100):
        mdp, pi, pi_star = random_triple(seed)
        gammas.add(mdp.gamma)
        assert mdp.n_states <= 20 and mdp.n_actions <= 5
        residuals.append(performance_gap_identity(mdp, pi, pi_star)["residual"])
    elapsed = time.perf_counter() - t0
    ok = max(residuals) <= 1e-8 and elapsed < 10 and gammas == {0.9, 0.99}
    verdict(1, "gap identity", ok, f"max residual {max(residuals):.2e} over 100 triples in {elapsed:.1f}s")


def test_criterion_2_bounds(verdict):
    t0 = time.perf_counter()
    violations = {"cor1": 0, "thm1_d_pi_star": 0, "thm1_d_pi": 0, "eq8": 0}
    for seed in range(1000):
        mdp, pi, pi_star = random_triple(10_000 + seed)
        violations["cor1"] += not check_corollary1(mdp, pi, pi_star)[2]
        violations["thm1_d_pi_star"] += not check_theorem1(mdp, pi, pi_star, "d_pi_star")[2]
        violations["thm1_d_pi"] += not check_theorem1(mdp, pi, pi_star, "d_pi")[2]
        violations["eq8"] += not check_eq8(mdp, pi, pi_star)[2]
    elapsed = time.perf_counter() - t0
    ok = sum(violations.values()) == 0 and elapsed < 60
    verdict(2, "bounds", ok, f"violations {violations} over 1000 triples in {elapsed:.1f}s")


def test_criterion_3_tightness(verdict):
    errs, slacks = [], []
    for seed in range(20):
        mdp, pi, pi_star = construct_tightness_case(seed)
        gap, bound, _ = check_corollary1(mdp, pi, pi_star)
        errs.append(abs(gap - bound))
        gap_p, bound_p, _ = check_corollary1(mdp, perturb_tightness_case(mdp, pi_star), pi_star)
        slacks.append(bound_p - gap_p)
    ok = max(errs) <= 1e-8 and min(slacks) >= 1e-6
    verdict(3, "tightness", ok, f"max |gap - bound| {max(errs):.2e}, min perturbed slack {min(slacks):.3e}")


def test_criterion_4_discount_separation(verdict):
    low, high = discount_ratio(0.9, 100), discount_ratio(0.99, 100)
    verdict(4, "discount separation", high > low, f"mean ratio {low:.3f} at 0.9 vs {high:.3f} at 0.99")


# -- 5: meta-gradient -------------------------------------------------------

def _fd_rel_error(syn, arch, steps, closure, n_coords, h, seed):
    opt = OptimizerSpec("gd", 0.1)
    _, gX, gL = meta_gradient(syn, arch, steps, opt, closure, 0)
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    for _ in range(n_coords):
        which = rng.integers(2)
        shape = syn.state_vectors.shape if which == 0 else syn.target_logits.shape
        i = tuple(rng.integers(n) for n in shape)
        vals = []
        for sign in (1, -1):
            pert = syn.copy()
            (pert.state_vectors if which == 0 else pert.target_logits)[i] += sign * h
            vals.append(meta_gradient(pert, arch, steps, opt, closure, 0)[0])
        numeric.append((vals[0] - vals[1]) / (2 * h))
        analytic.append((gX if which == 0 else gL)[i])
    analytic, numeric = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))


def test_criterion_5_meta_gradient(bench, verdict):
    mdp, ds, ex = bench
    t0 = time.perf_counter()
    states = ds.s[:64]
    syn = init_synthetic(ds, 16, seed=0)
    syn.state_vectors += np.random.default_rng(1).normal(scale=0.1, size=syn.state_vectors.shape)
    linear = MlpArchitecture((mdp.n_states, mdp.n_actions))
    rel1 = _fd_rel_error(syn, linear, 1,
                         lambda th: outer_loss_av_pbc(th, states, ex.pi_star, ex.q_star, arch=linear),
                         20, 1e-4, seed=0)
    mlp = MlpArchitecture.default(mdp.n_states, mdp.n_actions)
    rel20 = _fd_rel_error(syn, mlp, 20,
                          lambda th: outer_loss_av_pbc(th, states, ex.pi_star, ex.q_star, arch=mlp),
                          20, 1e-5, seed=1)
    elapsed = time.perf_counter() - t0
    ok = rel1 < 1e-4 and rel20 < 1e-3 and elapsed < 120
    verdict(5, "meta-gradient", ok, f"rel error {rel1:.2e} (T=1 linear), {rel20:.2e} (T=20 MLP) in {elapsed:.1f}s")


# -- 6-9: distillation on the gridworld benchmark ---------------------------

def test_criterion_6_ordering(bench, runs, verdict):
    mdp, ds, _ = bench
    random = random_selection_baseline(ds, 16, mdp, PROTOCOL).mean
    scores, times = {}, {}
    for obj in ("av_pbc", "pbc", "dbc"):
        rep, elapsed = runs(obj)
        scores[obj], times[obj] = rep.final_return(), elapsed
    ok = scores["av_pbc"] > scores["pbc"] > scores["dbc"] > random and max(times.values()) < 1800
    detail = (f"Av-PBC {scores['av_pbc']:.1f} > PBC {scores['pbc']:.1f} > DBC {scores['dbc']:.1f} > "
              f"Random {random:.1f}; slowest objective {max(times.values()) / 60:.1f} min")
    verdict(6, "objective ordering", ok, detail)


def test_criterion_7_convergence(runs, verdict):
    av = [runs("av_pbc", seed=s)[0].steps_to_fraction(0.9) for s in range(3)]
    pb = [runs("pbc", seed=s)[0].steps_to_fraction(0.9) for s in range(3)]
    ok = np.mean(av) <= np.mean(pb)
    verdict(7, "convergence speed", ok, f"steps to 90%: Av-PBC {av} mean {np.mean(av):.0f}, "
                                       f"PBC {pb} mean {np.mean(pb):.0f}")


def test_criterion_8_ensemble(bench, runs, verdict):
    mdp, _, _ = bench
    syn = runs("av_pbc")[0].synthetic
    proto = EvalProtocol(n_seeds=5, ensemble_k=10)
    ens = ensemble_evaluate(syn, mdp, proto)
    single = single_policy_trials(syn, mdp, proto)
    ok = ens.mean >= single.mean
    verdict(8, "ensemble", ok, f"ensemble-10 {ens.mean:.2f} vs single {single.mean:.2f} over 5 trials")


def test_criterion_9_size_sweep(runs, verdict):
    sizes = (4, 8, 16, 32)
    means = [runs("av_pbc", n_syn=n)[0].final_return() for n in sizes]
    stds = [final_std(runs("av_pbc", n_syn=n)[0]) for n in sizes]
    drops = [(means[i] - means[i + 1], max(stds[i], stds[i + 1])) for i in range(3) if means[i + 1] < means[i]]
    ok = len(drops) <= 1 and all(d <= s for d, s in drops)
    detail = ", ".join(f"{n}: {m:.1f}+-{s:.1f}" for n, m, s in zip(sizes, means, stds))
    verdict(9, "size sweep", ok, f"{detail}; inversions {len(drops)}")


# -- 10: exactness plumbing -------------------------------------------------

def test_criterion_10_plumbing(bench, tmp_path, verdict):
    t0 = time.perf_counter()
    mdp, ds, ex = bench
    pi = TabularPolicy(np.random.default_rng(0).dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
    exact = policy_evaluation(mdp, pi).j
    mc = sample_returns(mdp, pi, 100_000, horizon_for_tolerance(mdp.gamma, 1e-10), rng_seed=0)
    se = mc.std(ddof=1) / np.sqrt(len(mc))
    mc_ok = abs(mc.mean() - exact) <= 3 * se

    flow = 0.0
    for seed in range(20):
        m = make_random_mdp(15, 4, 3, 0.5, 0.99, seed=seed)
        p = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(4), size=15))
        d = occupancy_measures(m, p).d
        P, _ = policy_matrices(m, p)
        flow = max(flow, np.abs(d - m.gamma * P.T @ d - (1 - m.gamma) * m.initial_dist).max())

    save_mdp(mdp, tmp_path / "m.json")
    m2 = load_mdp(tmp_path / "m.json")
    same = [np.array_equal(m2.transition, mdp.transition) and np.array_equal(m2.reward, mdp.reward)
            and np.array_equal(m2.initial_dist, mdp.initial_dist) and m2.gamma == mdp.gamma]
    save_dataset(ds, tmp_path / "d.jsonl")
    d2 = load_dataset(tmp_path / "d.jsonl")
    same.append(all(np.array_equal(getattr(d2, k), getattr(ds, k)) for k in ("s", "a", "sp", "r")))
    ex.save(tmp_path / "e.json")
    e2 = Extraction.load(tmp_path / "e.json")
    same.append(np.array_equal(e2.pi_star.probs, ex.pi_star.probs) and np.array_equal(e2.q_star, ex.q_star))
    syn = init_synthetic(ds, 16, seed=0)
    syn.state_vectors += np.random.default_rng(2).normal(size=syn.state_vectors.shape)
    syn.save(tmp_path / "s.json")
    s2 = SyntheticDataset.load(tmp_path / "s.json")
    same.append(np.array_equal(s2.state_vectors, syn.state_vectors)
                and np.array_equal(s2.target_logits, syn.target_logits))
    params = init_params(MlpArchitecture.default(mdp.n_states, mdp.n_actions), 3)
    params.save(tmp_path / "p.json")
    p2 = PolicyParams.load(tmp_path / "p.json")
    same.append(all(np.array_equal(a, b) for a, b in zip(p2.flat(), params.flat())))

    elapsed = time.perf_counter() - t0
    ok = mc_ok and flow <= 1e-10 and all(same) and elapsed < 120
    verdict(10, "exactness plumbing",
            ok, f"MC {mc.mean():.5f} vs exact {exact:.5f} ({abs(mc.mean() - exact) / se:.2f} SE), "
                f"flow residual {flow:.1e}, round trips {sum(same)}/{len(same)} bit-exact, {elapsed:.1f}s")
