"""A short tour of the performance-gap checks.

Run: python demos/theory_tour.py

1. On a random MDP and a random policy pair, the gap J(pi*) - J(pi) equals
   the occupancy-weighted advantage expression exactly.
2. The action-value weighted bound and the total-variation bound both hold,
   and the weighted one is much tighter.
3. A constructed case makes the weighted bound exact; nudging it leaves slack.
4. On episodic MDPs the TV bound degrades faster as gamma -> 1.
"""
from obdkit.theory import (bound_report, check_corollary1, construct_tightness_case, discount_ratio,
                           perturb_tightness_case, performance_gap_identity, random_triple)


def main():
    mdp, pi, pi_star = random_triple(seed=7, gamma=0.9)
    print(f"random MDP: {mdp.n_states} states, {mdp.n_actions} actions, gamma {mdp.gamma}")

    ident = performance_gap_identity(mdp, pi, pi_star)
    print(f"\n1) gap {ident['lhs']:.10f}  vs  advantage form {ident['rhs']:.10f}  (residual {ident['residual']:.1e})")

    rep = bound_report(mdp, pi, pi_star)
    print(f"\n2) gap            {rep.gap:10.4f}")
    print(f"   weighted bound {rep.cor1_bound:10.4f}  holds={rep.cor1_holds}")
    print(f"   TV bound       {rep.thm1_bound:10.4f}  holds={rep.thm1_holds}  (reference {rep.reference})")

    mdp_t, pi_t, star_t = construct_tightness_case(seed=0)
    gap, bound, _ = check_corollary1(mdp_t, pi_t, star_t)
    print(f"\n3) tight case:     gap {gap:.12f}  bound {bound:.12f}")
    gap_p, bound_p, _ = check_corollary1(mdp_t, perturb_tightness_case(mdp_t, star_t), star_t)
    print(f"   perturbed case: gap {gap_p:.6f}  bound {bound_p:.6f}  slack {bound_p - gap_p:.4f}")

    print("\n4) mean TV/weighted bound ratio on 30 episodic MDPs")
    for gamma in (0.9, 0.99):
        print(f"   gamma {gamma}: {discount_ratio(gamma, n=30):9.2f}")


if __name__ == "__main__":
    main()
