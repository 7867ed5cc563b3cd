"""Evaluate the probabilistic security of the stealth-reset scheme.

Prints the full-size exhaustion bound for a range of attack budgets, then
cross-checks the scaled-down analytic model against Monte Carlo, where the
numbers are large enough to actually simulate.
"""

from freshsim.analysis import (
    ExhaustionQuery,
    analytic_exhaustion_prob,
    exhaustion_bound,
    mc_exhaustion,
    mc_replay,
    no_reset_prob,
    replay_success_prob,
)


def main():
    q = ExhaustionQuery()
    print("full-size parameters: 27 stealth bits, reset chance 2^-20")
    print(f"  per-interval no-reset probability ({q.interval_updates} updates): "
          f"{no_reset_prob(q.interval_updates, q.reset_exp):.4e}")
    print(f"  exhaustion bound over 2^56 updates: {exhaustion_bound(q):.4e}")
    print(f"  replay success probability: {replay_success_prob(27):.4e}\n")

    print("bound vs. attack budget (years at ~100M updates/s per column):")
    for shift in (50, 53, 56, 59):
        query = ExhaustionQuery(
            total_updates=1 << shift,
            interval_updates=1 << 26,
            interval_count=1 << (shift - 26),
            reset_exp=20,
        )
        print(f"  2^{shift} updates -> {exhaustion_bound(query):.3e}")
    print()

    print("scaled-down cross-check (stealth=3 bits, reset=2^-2):")
    print(f"  {'updates':>8} {'analytic':>10} {'monte carlo':>12} {'z':>6}")
    for updates in (16, 24, 32, 48):
        expect = analytic_exhaustion_prob(3, 2, updates)
        est = mc_exhaustion(3, 2, updates_per_address=updates, trials=50_000, seed=4)
        z = (est.estimate - expect) / est.stderr if est.stderr else 0.0
        print(f"  {updates:>8} {expect:>10.4f} "
              f"{est.estimate:>7.4f} ({est.stderr:.4f}) {z:>+6.2f}")
    print()

    est = mc_replay(10, trials=500_000, seed=4)
    print(f"replay at 10 stealth bits: analytic {replay_success_prob(10):.5f}, "
          f"simulated {est.estimate:.5f} +- {est.stderr:.5f}")


if __name__ == "__main__":
    main()
