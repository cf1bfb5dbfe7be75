"""Deferred acceptance, stability audits and matching schemes."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np

from .market import (
    Market,
    MarketError,
    Matching,
    MatchingScheme,
    absolute_rank,
    check_matching,
    relative_rank,
    require_valid,
    restrict_to_district,
)

ENUMERATION_LIMIT = (10, 6)


def deferred_acceptance(prefs: Sequence[Sequence[int]], prank: np.ndarray,
                        capacity: np.ndarray) -> np.ndarray:
    """Student-proposing DA over integer indices.

    ``prefs[t]`` lists school indices best first, ``prank[s, t]`` is the
    priority position of t at s (smaller is better, negative = unacceptable).
    Returns the school index per student, -1 when unmatched.
    """
    n_t = len(prefs)
    n_s = len(capacity)
    mu = np.full(n_t, -1, dtype=np.int64)
    nxt = [0] * n_t
    held: list[list[tuple[int, int]]] = [[] for _ in range(n_s)]  # max-heap on rank
    free = list(range(n_t - 1, -1, -1))
    steps = 0
    while free:
        t = free.pop()
        lst = prefs[t]
        while nxt[t] < len(lst):
            s = lst[nxt[t]]
            nxt[t] += 1
            steps += 1
            r = prank[s, t]
            if r < 0:
                continue
            heap = held[s]
            if len(heap) < capacity[s]:
                heapq.heappush(heap, (-r, t))
                mu[t] = s
                break
            if heap and -heap[0][0] > r:
                _, out = heapq.heapreplace(heap, (-r, t))
                mu[t] = s
                mu[out] = -1
                free.append(out)
                break
    assert steps <= n_t * n_s, "deferred acceptance exceeded |T||S| proposals"
    return mu


def _acceptability(market: Market) -> np.ndarray:
    """(S, T) priority positions with -1 where the pair is not mutually listed."""
    prank = market.priority_rank.copy()
    listed = np.zeros_like(prank, dtype=bool)
    for i, lst in enumerate(market.pref_indices):
        listed[list(lst), i] = True
    prank[~listed] = -1
    return prank


def sosm(market: Market) -> Matching:
    """Student-optimal stable matching of ``market`` via deferred acceptance."""
    require_valid(market)
    mu = deferred_acceptance(market.pref_indices, market.priority_rank,
                             market.capacity_array)
    return Matching.from_array(market, mu)


@dataclass(frozen=True)
class BlockingPair:
    student: str
    school: str
    reason: Literal["vacant-seat", "justified-envy", "individual-rationality"]


def is_stable(market: Market, matching: Matching) -> list[BlockingPair]:
    """All blocking pairs of ``matching``; empty iff stable.

    Unlisted pairs never block.  Besides the two textbook clauses, a match
    that is not mutually acceptable is reported as ``individual-rationality``
    and a matched student who prefers an acceptable vacant school is reported
    as ``vacant-seat``.
    """
    check_matching(market, matching)
    acc = _acceptability(market)
    s_idx, t_idx = market.school_index, market.student_index
    mu = matching.to_array(market)
    cap = market.capacity_array
    load = np.bincount(mu[mu >= 0], minlength=len(market.schools))
    # worst admitted priority per school
    worst = np.full(len(market.schools), -1, dtype=np.int64)
    for i, j in enumerate(mu):
        if j >= 0:
            worst[j] = max(worst[j], acc[j, i] if acc[j, i] >= 0 else np.iinfo(np.int64).max)

    out: list[BlockingPair] = []
    for t in market.students:
        i = t_idx[t]
        cur = mu[i]
        if cur >= 0 and acc[cur, i] < 0:
            out.append(BlockingPair(t, market.schools[cur], "individual-rationality"))
        for s in market.student_prefs[t]:
            j = s_idx[s]
            if j == cur:
                break
            if acc[j, i] < 0:
                continue
            if load[j] < cap[j]:
                out.append(BlockingPair(t, s, "vacant-seat"))
            elif acc[j, i] < worst[j]:
                out.append(BlockingPair(t, s, "justified-envy"))
    return out


def enumerate_stable(market: Market) -> set[Matching]:
    """Every stable matching, by exhaustive search (small markets only)."""
    n_t, n_s = len(market.students), len(market.schools)
    if n_t > ENUMERATION_LIMIT[0] or n_s > ENUMERATION_LIMIT[1]:
        raise MarketError(
            f"enumerate_stable is limited to {ENUMERATION_LIMIT[0]} students and "
            f"{ENUMERATION_LIMIT[1]} schools, got {n_t}x{n_s}"
        )
    require_valid(market)
    acc = _acceptability(market)
    prefs = [[j for j in lst if acc[j, i] >= 0] for i, lst in enumerate(market.pref_indices)]
    options = [[-1] + prefs[i] for i in range(n_t)]
    cap = market.capacity_array.tolist()
    load = [0] * n_s
    worst = [[] for _ in range(n_s)]  # member priority positions per school
    mu = [-1] * n_t
    found: set[Matching] = set()

    def envies(i: int, j: int) -> bool:
        # i is listed by j, which is full and ranks i above a member
        return load[j] >= cap[j] and acc[j, i] < max(worst[j])

    def settled_ok(k: int) -> bool:
        # a full school never changes, so envy towards it is already final
        for i in range(k + 1):
            for j in prefs[i]:
                if j == mu[i]:
                    break
                if load[j] >= cap[j] and envies(i, j):
                    return False
        return True

    def stable_leaf() -> bool:
        for i in range(n_t):
            for j in prefs[i]:
                if j == mu[i]:
                    break
                if load[j] < cap[j] or envies(i, j):
                    return False
        return True

    def rec(i: int) -> None:
        if i == n_t:
            if stable_leaf():
                found.add(Matching.from_array(market, np.array(mu, dtype=np.int64)))
            return
        for j in options[i]:
            if j >= 0:
                if load[j] >= cap[j]:
                    continue
                load[j] += 1
                worst[j].append(acc[j, i])
            mu[i] = j
            if settled_ok(i):
                rec(i + 1)
            if j >= 0:
                load[j] -= 1
                worst[j].pop()
        mu[i] = -1

    rec(0)
    return found


def compute_scheme(market: Market) -> MatchingScheme:
    """District-level and consolidated SOSMs."""
    require_valid(market, districts=True)
    per = {d: sosm(restrict_to_district(market, d)) for d in market.districts}
    return MatchingScheme(per_district=per, consolidated=sosm(market))


def adversarial_partition(market: Market) -> dict[str, str]:
    """District labels under which no student gains from consolidation.

    Every consolidated match pair is put in the same district: one district
    per school that receives students, with vacant schools folded into the
    first district.
    """
    consolidated = sosm(market)
    unmatched = [t for t in market.students if consolidated.school_of(t) is None]
    if unmatched:
        raise MarketError(
            f"consolidated SOSM leaves {len(unmatched)} students unmatched, "
            "so no partition keeps every match pair together"
        )
    labels: dict[str, str] = {}
    used = [s for s in market.schools if consolidated.roster(s)]
    for k, s in enumerate(used):
        labels[s] = f"P{k + 1}"
        for t in consolidated.roster(s):
            labels[t] = f"P{k + 1}"
    for s in market.schools:
        labels.setdefault(s, "P1")
    return labels


@dataclass(frozen=True)
class WelfareClassification:
    """Students split by how consolidation changes their assignment.

    ``unmatched_in_district`` holds students with no district-level seat;
    they are kept apart from the other three sets as in per-district tables.
    ``convention_winners`` are those among them who count as winners when
    being unmatched is valued one rank below the last listed school.
    """

    winners: frozenset
    losers: frozenset
    indifferent: frozenset
    unmatched_in_district: frozenset
    convention_winners: frozenset

    @property
    def n_students(self) -> int:
        return (len(self.winners) + len(self.losers) + len(self.indifferent)
                + len(self.unmatched_in_district))

    @property
    def winners_share(self) -> float:
        """Share of strict winners, unmatched-in-district gainers included."""
        n = self.n_students
        return (len(self.winners) + len(self.convention_winners)) / n if n else float("nan")

    def counts(self) -> dict[str, int]:
        return {"-": len(self.losers), "0": len(self.indifferent),
                "+": len(self.winners), "unmatched": len(self.unmatched_in_district)}

    def restrict(self, students) -> "WelfareClassification":
        keep = frozenset(students)
        return WelfareClassification(self.winners & keep, self.losers & keep,
                                     self.indifferent & keep,
                                     self.unmatched_in_district & keep,
                                     self.convention_winners & keep)


def _position(prefs: Sequence[str], school: str | None) -> int:
    """1-based list position; unmatched or unlisted counts as last + 1."""
    if school is None or school not in prefs:
        return len(prefs) + 1
    return prefs.index(school) + 1


def classify_welfare(market: Market, scheme: MatchingScheme) -> WelfareClassification:
    win, lose, same, unm, conv = set(), set(), set(), set(), set()
    for t in market.students:
        prefs = market.student_prefs[t]
        before = scheme.district_school(market, t)
        after = scheme.consolidated.school_of(t)
        r_after = _position(prefs, after)
        if before is None:
            unm.add(t)
            if r_after < len(prefs) + 1:
                conv.add(t)
            continue
        r_before = _position(prefs, before)
        (win if r_after < r_before else lose if r_after > r_before else same).add(t)
    return WelfareClassification(*(frozenset(x) for x in (win, lose, same, unm, conv)))


def rank_statistics(market: Market, matching: Matching,
                    scope: Literal["absolute", "relative"] = "absolute",
                    students: Sequence[str] | None = None) -> float:
    """Mean rank of assigned schools over matched students."""
    pool = market.students if students is None else students
    rank = absolute_rank if scope == "absolute" else relative_rank
    if scope not in ("absolute", "relative"):
        raise ValueError(f"unknown scope {scope!r}")
    vals = [rank(market, t, s) for t in pool if (s := matching.school_of(t)) is not None]
    if not vals:
        raise MarketError("mean rank is undefined: no matched students")
    return float(np.mean(vals))


def scheme_ranks(market: Market, scheme: MatchingScheme,
                 district: str) -> tuple[float, float]:
    """(district-level, consolidated) mean absolute rank for one district's students."""
    students = market.students_in(district)
    before = rank_statistics(market, scheme.district_matching(), "absolute", students)
    after = rank_statistics(market, scheme.consolidated, "absolute", students)
    return before, after


def as_labels(assignment: Mapping[str, str | None]) -> dict[str, str]:
    return {t: ("UNMATCHED" if s is None else s) for t, s in assignment.items()}

