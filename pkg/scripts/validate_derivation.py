"""Compare the closed-form p_c* with simulated elections over a parameter grid.

Prints one CSV row per grid point: the solver output, the Monte Carlo success
rate at p_c*, its 95% half-width and the normal-approximation probability.
"""
import argparse
import csv
import itertools
import sys

from ballotadv import election as E

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["p_b", "delta", "n", "alpha", "p_c_star", "ballots_required", "mc_rate", "ci", "analytic"])
    for p_b, delta, n, alpha in itertools.product((0.3, 0.45), (0.02, 0.04, 0.08), (10_000, 100_000),
                                                  (0.01, 0.05, 0.1)):
        dist = E.VoteDistribution(p_b, delta)
        s = E.solve_pc_star(dist, n, alpha)
        if not s.feasible:
            w.writerow([p_b, delta, n, alpha, "", "", "", "", ""])
            continue
        rate, ci = E.monte_carlo_success(dist, s.p_c_star, n, a.trials, a.seed)
        w.writerow([p_b, delta, n, alpha, f"{s.p_c_star:.8f}", s.ballots_required, f"{rate:.4f}",
                    f"{ci:.4f}", f"{E.success_probability(dist, s.p_c_star, n):.4f}"])
