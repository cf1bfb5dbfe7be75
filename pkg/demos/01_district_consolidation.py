"""Who gains and who loses when two districts merge their school markets.

Run: python3 demos/01_district_consolidation.py
"""
import numpy as np

from consolidation import (
    Market,
    adversarial_partition,
    classify_welfare,
    compute_scheme,
    is_stable,
    rank_statistics,
)
from consolidation.random_market import DistrictSpec, generate_random_escp

# Three students and three single-seat schools in two districts.
# t1, t2, s1 and s2 form district D1; t3 and s3 form D2.
market = Market(
    students=("t1", "t2", "t3"),
    schools=("s1", "s2", "s3"),
    capacity={"s1": 1, "s2": 1, "s3": 1},
    district_of={"t1": "D1", "t2": "D1", "s1": "D1", "s2": "D1", "t3": "D2", "s3": "D2"},
    student_prefs={"t1": ("s2", "s1", "s3"), "t2": ("s1", "s2", "s3"),
                   "t3": ("s1", "s3", "s2")},
    school_priorities={"s1": ("t1", "t3", "t2"), "s2": ("t2", "t1", "t3"),
                       "s3": ("t3", "t1", "t2")},
)

# Each district clears on its own, then the merged market clears once.
scheme = compute_scheme(market)
print("district matching:    ", dict(scheme.district_matching().assignment))
print("consolidated matching:", dict(scheme.consolidated.assignment))

# Both D1 students end up at their second choice: t3 now competes for s1
# and, having priority over t2 there, breaks the D1 arrangement.
cls = classify_welfare(market, scheme)
print("losers:", sorted(cls.losers), "winners:", sorted(cls.winners))
print("blocking pairs of the district matching in the merged market:",
      [(b.student, b.school) for b in is_stable(market, scheme.district_matching())])

before = rank_statistics(market, scheme.district_matching())
after = rank_statistics(market, scheme.consolidated)
print("mean rank before/after:", before, after)

# Any market where everyone is matched can be cut into districts so that
# nobody gains from merging them: group each student with their school.
rng_market = generate_random_escp([DistrictSpec(6, 1)], q=1, seed=3)
labels = adversarial_partition(rng_market)
worst = rng_market.with_districts(labels)
worst_cls = classify_welfare(worst, compute_scheme(worst))
print("\nadversarial partition into", len(set(labels.values())), "districts:",
      worst_cls.counts())
