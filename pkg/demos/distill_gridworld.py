"""Distil a 5x5 gridworld dataset into 16 synthetic pairs.

Run: python demos/distill_gridworld.py [outer_steps]

The script builds a slippery gridworld, collects 10^5 medium-replay
transitions, extracts (pi*, q*) with pessimistic value iteration and then
runs the three outer objectives side by side. Scores are normalised returns
(0 = uniform policy, 100 = optimal) of fresh networks trained on the 16
synthetic pairs. A random pick of 16 real pairs is the baseline.

The default 300 outer steps take a few minutes on one core; the acceptance
suite uses 2000.
"""
import sys

from obdkit import (DistillConfig, EvalProtocol, ExtractionConfig, distill, extract, make_gridworld,
                    make_tier_dataset, random_selection_baseline)


def main(outer_steps=300):
    mdp = make_gridworld(5, 5, goal_reward=1.0, slip_prob=0.1, gamma=0.9)
    data = make_tier_dataset(mdp, "medium_replay", 100_000, seed=0)
    ex = extract(data, ExtractionConfig(gamma=mdp.gamma))
    print(f"{len(data)} transitions over {mdp.n_states} states; extracted pi* from the data alone")

    protocol = EvalProtocol()
    base = random_selection_baseline(data, 16, mdp, protocol)
    print(f"random selection of 16 real pairs: {base.mean:6.1f}")

    for objective in ("dbc", "pbc", "av_pbc"):
        cfg = DistillConfig(objective=objective, outer_steps=outer_steps, outer_lr=10.0)
        rep = distill(mdp, data, ex.pi_star, ex.q_star, cfg, protocol=protocol)
        curve = " ".join(f"{r.return_mean:5.1f}" for r in rep.records)
        print(f"{objective:>7}: final {rep.final_return():6.1f}   curve {curve}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)
