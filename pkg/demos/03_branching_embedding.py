"""The branching process embedded in the untouched boxes.

Run: python3 demos/03_branching_embedding.py
"""

import math

from fractalcover import branching as br
from fractalcover.measure import ball_measure, expected_untouched, lambda_e_closed
from fractalcover.sampler import LazyProcess, SampleConfig

balls = ball_measure(2)
lam_e = lambda_e_closed(balls)
lam = 0.5 * lam_e

# N is the smallest level with E|m_N| >= 3^d 2^{alpha N}.
eps = 0.99 * br.max_admissible_eps(balls, lam)
N, how = br.choose_N(balls, lam, eps)
print(f"lambda = {lam:.4f}: N = {N} ({how}), E|m_N| = {expected_untouched(balls, lam, N):.2f}, "
      f"growth bound {br.growth_bound(balls, lam, eps, N):.3f}")

# Without sets the packing keeps every other box: 2^{(N-1)d} offspring.
rec = br.run_embedding(LazyProcess(SampleConfig(balls, 0.0, 9)), 3, 3)
print("lambda = 0, N = 3:", [r.Z for r in rec])

# Subcritical and supercritical runs.
for factor in (0.5, 1.5):
    alive = 0
    for s in range(10):
        p = LazyProcess(SampleConfig(balls, factor * lam_e, 2 * N, seed=s))
        rec = br.run_embedding(p, N, 2, max_parents=4)
        alive += br.survived(rec, 2)
        g = br.growth_rate_estimate(rec)
    print(f"{factor} lambda_e: alive after 2 generations in {alive} of 10 runs; "
          f"last growth estimate {g.mean_offspring if g.defined else math.nan:.2f}")
