"""Uniform random school choice problems and closed-form rank approximations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import Market
from .matching import deferred_acceptance

MAX_PREFERENCE_ENTRIES = 200_000_000


@dataclass(frozen=True)
class DistrictSpec:
    """A district with ``q * n`` students and ``n + k`` schools of ``q`` seats."""

    n: int
    k: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"district needs n >= 1, got {self.n}")
        if self.n + self.k < 1:
            raise ValueError(f"district needs n + k >= 1, got {self.n + self.k}")


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the sub-stream ``key`` of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class RandomArrays:
    """Index form of a random market: labels, preference and priority permutations."""

    student_district: np.ndarray  # (T,)
    school_district: np.ndarray   # (S,)
    prefs: np.ndarray             # (T, S) school indices, best first
    prank: np.ndarray             # (S, T) priority position, 0 = best
    q: int


def _random_arrays(specs: Sequence[DistrictSpec], q: int,
                   rng: np.random.Generator) -> RandomArrays:
    if not specs:
        raise ValueError("at least one district is required")
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    n_t = q * sum(d.n for d in specs)
    n_s = sum(d.n + d.k for d in specs)
    if n_t * n_s * 2 > MAX_PREFERENCE_ENTRIES:
        raise OverflowError(f"market with {n_t} students and {n_s} schools is too large")
    t_dist = np.repeat(np.arange(len(specs)), [q * d.n for d in specs])
    s_dist = np.repeat(np.arange(len(specs)), [d.n + d.k for d in specs])
    prefs = rng.permuted(np.tile(np.arange(n_s), (n_t, 1)), axis=1)
    order = rng.permuted(np.tile(np.arange(n_t), (n_s, 1)), axis=1)
    prank = np.empty_like(order)
    np.put_along_axis(prank, order, np.arange(n_t)[None, :].repeat(n_s, 0), axis=1)
    return RandomArrays(t_dist, s_dist, prefs, prank, q)


def _to_market(arr: RandomArrays) -> Market:
    students = tuple(f"t{i + 1}" for i in range(len(arr.student_district)))
    schools = tuple(f"s{j + 1}" for j in range(len(arr.school_district)))
    district_of = {t: f"D{d + 1}" for t, d in zip(students, arr.student_district)}
    district_of.update({s: f"D{d + 1}" for s, d in zip(schools, arr.school_district)})
    order = np.argsort(arr.prank, axis=1)
    return Market(
        students=students,
        schools=schools,
        capacity={s: arr.q for s in schools},
        district_of=district_of,
        student_prefs={t: tuple(schools[j] for j in row)
                       for t, row in zip(students, arr.prefs)},
        school_priorities={s: tuple(students[i] for i in row)
                           for s, row in zip(schools, order)},
        complete=True,
    )


def generate_random_escp(specs: Sequence[DistrictSpec], q: int = 1,
                         seed: int = 0) -> Market:
    """Random market with uniformly drawn society-wide preferences and priorities."""
    return _to_market(_random_arrays(specs, q, rng_for(seed)))


def approx_absolute_rank(N: int, K: int, q: int) -> float:
    """Large-market approximation of the mean absolute rank under consolidation."""
    if K < 1:
        raise ValueError("approximation needs K >= 1 (log diverges at K = 0)")
    if N < 1 or q < 1:
        raise ValueError("approximation needs N >= 1 and q >= 1")
    return (N + K) / (q * N) * math.log((N + K) / K) + 1


def approx_gain(n: int, k: int, N: int, K: int, q: int) -> float:
    """Approximate expected rank gain from consolidation for one district.

    Balanced districts (k = 0) have no closed form here and raise; for
    overdemanded districts the log uses ``|k|``.
    """
    if K < 1:
        raise ValueError("approximation needs K >= 1")
    society = math.log((N + K) / K) / N
    if k >= 1:
        return (N + K) / q * (math.log((n + k) / k) / n - society)
    if k == 0:
        raise ValueError("no approximation for a balanced district (k = 0)")
    if n <= -k:
        raise ValueError("overdemanded approximation needs n > |k|")
    return (N + K) / q * (q * (n + k) / (n * math.log(n / -k)) - society)


def _mean_rank(prefs: np.ndarray, mu: np.ndarray, members: np.ndarray) -> float:
    pos = np.argsort(prefs, axis=1)  # pos[t, s] = 0-based rank of s
    sel = members[mu[members] >= 0]
    if len(sel) == 0:
        return float("nan")
    return float(np.mean(pos[sel, mu[sel]] + 1))


def scheme_mean_ranks(arr: RandomArrays) -> tuple[np.ndarray, np.ndarray]:
    """Per-district mean absolute rank before and after consolidation."""
    n_d = int(arr.school_district.max()) + 1
    cap = np.full(len(arr.school_district), arr.q, dtype=np.int64)
    mu_all = deferred_acceptance(arr.prefs.tolist(), arr.prank, cap)
    mu_dist = np.full_like(mu_all, -1)
    for d in range(n_d):
        ts = np.flatnonzero(arr.student_district == d)
        ss = np.flatnonzero(arr.school_district == d)
        local = {int(j): k for k, j in enumerate(ss)}
        prefs = [[local[j] for j in row if j in local] for row in arr.prefs[ts].tolist()]
        mu = deferred_acceptance(prefs, arr.prank[np.ix_(ss, ts)], cap[ss])
        mu_dist[ts] = np.where(mu >= 0, ss[np.maximum(mu, 0)], -1)
    before = np.empty(n_d)
    after = np.empty(n_d)
    for d in range(n_d):
        ts = np.flatnonzero(arr.student_district == d)
        before[d] = _mean_rank(arr.prefs, mu_dist, ts)
        after[d] = _mean_rank(arr.prefs, mu_all, ts)
    return before, after


def consolidated_mean_rank(specs: Sequence[DistrictSpec], q: int, seed: int,
                           rep: int = 0) -> float:
    """Mean absolute rank of the consolidated SOSM in one random market."""
    arr = _random_arrays(specs, q, rng_for(seed, rep))
    cap = np.full(len(arr.school_district), q, dtype=np.int64)
    mu = deferred_acceptance(arr.prefs.tolist(), arr.prank, cap)
    return _mean_rank(arr.prefs, mu, np.arange(len(mu)))


def gain_experiment(specs: Sequence[DistrictSpec], reps: int, seed: int = 0,
                    q: int = 1) -> list[dict]:
    """Empirical per-district rank gains next to their closed-form approximation."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    gains = np.empty((reps, len(specs)))
    for r in range(reps):
        before, after = scheme_mean_ranks(_random_arrays(specs, q, rng_for(seed, r)))
        gains[r] = before - after
    N = sum(d.n for d in specs)
    K = sum(d.k for d in specs)
    rows = []
    for i, d in enumerate(specs):
        try:
            approx = approx_gain(d.n, d.k, N, K, q)
        except ValueError:
            approx = float("nan")
        col = gains[:, i]
        rows.append({
            "district": f"D{i + 1}",
            "n": d.n,
            "k": d.k,
            "gain_mean": float(np.nanmean(col)),
            "gain_sd": float(np.nanstd(col, ddof=1)) if reps > 1 else 0.0,
            "gain_se": float(np.nanstd(col, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
            "gain_approx": approx,
            "reps": reps,
        })
    return rows
