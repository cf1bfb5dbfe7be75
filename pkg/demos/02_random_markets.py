"""Average consolidation gains in markets with uniformly random preferences.

Run: python3 demos/02_random_markets.py
"""
import numpy as np

from consolidation.random_market import (
    DistrictSpec,
    approx_absolute_rank,
    approx_gain,
    consolidated_mean_rank,
    gain_experiment,
)

# Mean rank of the assigned school in one big market: 990 students,
# 200 schools with 5 seats each, so 10 seats are left over.
approx = approx_absolute_rank(198, 2, 5)
sims = [consolidated_mean_rank([DistrictSpec(198, 2)], 5, seed=0, rep=r) for r in range(30)]
print(f"approximate mean rank {approx:.3f}, simulated {np.mean(sims):.3f}")

# More spare seats make every student's assignment better.
for K in (1, 5, 20, 100):
    print(f"  K={K:>3}: approximation {approx_absolute_rank(198, K, 5):.3f}")

# Two districts in an underdemanded society: the district short of seats
# gains far more from merging than the one with slack.
specs = [DistrictSpec(10, -1), DistrictSpec(10, 3)]
N, K = sum(d.n for d in specs), sum(d.k for d in specs)
for row in gain_experiment(specs, reps=200, seed=1):
    print(f"{row['district']} (n={row['n']}, k={row['k']:+d}): simulated gain "
          f"{row['gain_mean']:+.2f} ± {row['gain_se']:.2f}, approximation "
          f"{row['gain_approx']:+.2f}")

# Smaller districts gain more, holding the society fixed.
for n in (40, 20, 10, 5):
    print(f"  n={n:>2}, k=2: approximate gain {approx_gain(n, 2, 100, 10, 1):.2f}")
