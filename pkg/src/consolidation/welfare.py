"""Consolidation gains on markets with known (realized) latent utilities.

Schools are indexed 0..S-1 and students 0..T-1 in the order of the
underlying :class:`Market`; matchings are integer arrays with -1 for
unmatched students.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Sequence

import numpy as np

from .market import Market, MarketError, Matching, MatchingScheme
from .matching import WelfareClassification, classify_welfare, compute_scheme
from .random_market import rng_for


@dataclass(frozen=True, eq=False)
class RealizedMarket:
    """A complete market together with the cardinal latents that induced it.

    ``U`` is (T, S) and ``V`` is (S, T).  ``acceptable`` (S, T) marks pairs
    a school did not reject during estimation; it only affects feasible sets.
    ``distance`` (T, S) is optional and used for km-equivalents.
    """

    market: Market
    U: np.ndarray
    V: np.ndarray
    acceptable: np.ndarray | None = None
    distance: np.ndarray | None = None

    @classmethod
    def from_latents(cls, students: Sequence[str], schools: Sequence[str],
                     capacity: Mapping[str, int], district_of: Mapping[str, str],
                     U, V, acceptable=None, distance=None) -> "RealizedMarket":
        U = np.asarray(U, dtype=float)
        V = np.asarray(V, dtype=float)
        students, schools = tuple(students), tuple(schools)
        order_u = np.argsort(-U, axis=1, kind="stable")
        order_v = np.argsort(-V, axis=1, kind="stable")
        market = Market(
            students=students,
            schools=schools,
            capacity=dict(capacity),
            district_of=dict(district_of),
            student_prefs={t: tuple(schools[j] for j in order_u[i])
                           for i, t in enumerate(students)},
            school_priorities={s: tuple(students[i] for i in order_v[j])
                               for j, s in enumerate(schools)},
            complete=True,
        )
        return cls(market, U, V,
                   None if acceptable is None else np.asarray(acceptable, dtype=bool),
                   None if distance is None else np.asarray(distance, dtype=float))

    def with_market(self, market: Market) -> "RealizedMarket":
        return replace(self, market=market)

    @property
    def student_district(self) -> np.ndarray:
        labels = {d: k for k, d in enumerate(self.market.districts)}
        return np.array([labels[self.market.district_of[t]] for t in self.market.students])

    @property
    def school_district(self) -> np.ndarray:
        labels = {d: k for k, d in enumerate(self.market.districts)}
        return np.array([labels[self.market.district_of[s]] for s in self.market.schools])


def utility_gain(U: np.ndarray, mu_consolidated: np.ndarray,
                 mu_district: np.ndarray) -> np.ndarray:
    """U_t(consolidated school) - U_t(district school); NaN if either is unmatched."""
    U = np.asarray(U, dtype=float)
    mc, md = np.asarray(mu_consolidated), np.asarray(mu_district)
    if mc.shape != md.shape or mc.shape[0] != U.shape[0]:
        raise ValueError("matchings must cover the same students as U")
    rows = np.arange(U.shape[0])
    out = U[rows, np.maximum(mc, 0)] - U[rows, np.maximum(md, 0)]
    out[(mc < 0) | (md < 0)] = np.nan
    return out


def km_equivalent(delta_u, distance_coef: float, distance_sq_coef: float = 0.0,
                  d_assigned=0.0):
    """Gain in km of travel distance: delta_u / |c1 + 2 c2 d|."""
    slope = np.abs(distance_coef + 2.0 * distance_sq_coef * np.asarray(d_assigned, float))
    if np.any(slope <= 1e-6):
        raise ValueError("marginal distance disutility is too close to zero")
    out = np.asarray(delta_u, dtype=float) / slope
    return float(out) if out.ndim == 0 else out


def cutoffs(mu: np.ndarray, V: np.ndarray, capacity: np.ndarray) -> np.ndarray:
    """Lowest member valuation per school; -inf for schools with spare seats."""
    mu = np.asarray(mu)
    S = V.shape[0]
    out = np.full(S, -np.inf)
    for s in range(S):
        members = np.flatnonzero(mu == s)
        if len(members) >= capacity[s] and len(members):
            out[s] = V[s, members].min()
    return out


def feasible_matrix(cut: np.ndarray, V: np.ndarray,
                    acceptable: np.ndarray | None = None) -> np.ndarray:
    """(T, S) mask of schools whose cutoff each student meets."""
    F = (V >= cut[:, None]).T
    if acceptable is not None:
        F &= acceptable.T
    return F


def feasible_set(student: int, cut: np.ndarray, V: np.ndarray,
                 scope: Literal["all", "district"] = "all",
                 school_district: np.ndarray | None = None,
                 student_district: int | None = None,
                 acceptable: np.ndarray | None = None) -> set[int]:
    ok = V[:, student] >= cut
    if acceptable is not None:
        ok &= acceptable[:, student]
    if scope == "district":
        if school_district is None or student_district is None:
            raise ValueError("district scope needs district labels")
        ok &= np.asarray(school_district) == student_district
    elif scope != "all":
        raise ValueError(f"unknown scope {scope!r}")
    return set(np.flatnonzero(ok).tolist())


def _best(U: np.ndarray, F: np.ndarray) -> np.ndarray:
    vals = np.where(F, U, -np.inf).max(axis=1)
    vals[~F.any(axis=1)] = np.nan
    return vals


def decompose(U: np.ndarray, V: np.ndarray, mu_district: np.ndarray,
              mu_consolidated: np.ndarray, student_district: np.ndarray,
              school_district: np.ndarray, capacity: np.ndarray,
              acceptable: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Choice and competition components of both types; NaN where undefined."""
    home = np.asarray(student_district)[:, None] == np.asarray(school_district)[None, :]
    F_bp = feasible_matrix(cutoffs(mu_consolidated, V, capacity), V, acceptable)
    F_d = feasible_matrix(cutoffs(mu_district, V, capacity), V, acceptable)
    a = _best(U, F_bp)          # global choice, consolidated cutoffs
    b = _best(U, F_bp & home)   # home choice, consolidated cutoffs
    c = _best(U, F_d)           # global choice, district cutoffs
    d = _best(U, F_d & home)    # home choice, district cutoffs
    return {"ch1": a - b, "co1": b - d, "ch2": c - d, "co2": a - c}


def largest_remainder(weights: Sequence[float], total: int, floor: int = 1) -> np.ndarray:
    """Integer seats proportional to ``weights`` summing to ``total``, each >= floor.

    Remainders are handed out by size, ties to the earlier entry.  Entries
    whose share falls below ``floor`` are pinned there and the rest is
    reapportioned.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if total < floor * n:
        raise ValueError(f"cannot give {n} schools at least {floor} seat(s) from {total}")
    pinned = np.zeros(n, dtype=bool)
    while True:
        free = ~pinned
        rest = total - floor * pinned.sum()
        quota = np.zeros(n)
        quota[free] = rest * w[free] / w[free].sum()
        low = free & (quota < floor)
        if not low.any():
            break
        pinned |= low
    seats = np.where(pinned, floor, np.floor(quota + 1e-12)).astype(np.int64)
    short = total - seats.sum()
    frac = np.where(pinned, -1.0, quota - seats)
    order = sorted(range(n), key=lambda j: (-round(frac[j], 12), j))
    for j in order[:short]:
        seats[j] += 1
    return seats


def balance_capacities(market: Market) -> Market:
    """Scale seats within each district so seats equal local students."""
    cap = dict(market.capacity)
    for d in market.districts:
        schools = market.schools_in(d)
        n = len(market.students_in(d))
        if not schools or sum(cap[s] for s in schools) < 1:
            raise MarketError(f"district {d!r} has no seats to scale")
        if n < len(schools):
            raise MarketError(
                f"district {d!r} has {n} students for {len(schools)} schools; "
                "every school must keep a seat")
        seats = largest_remainder([cap[s] for s in schools], n)
        cap.update(zip(schools, seats.tolist()))
    return replace(market, capacity=cap)


@dataclass
class GainsReport:
    students: tuple[str, ...]
    district: tuple[str, ...]
    delta_u: np.ndarray
    delta_u_km: np.ndarray
    ch1: np.ndarray
    co1: np.ndarray
    ch2: np.ndarray
    co2: np.ndarray
    classification: WelfareClassification
    scheme: MatchingScheme
    cutoffs_district: np.ndarray = field(default=None)
    cutoffs_consolidated: np.ndarray = field(default=None)

    @property
    def n_undefined(self) -> int:
        return int(np.isnan(self.delta_u).sum())

    def identity_gaps(self) -> np.ndarray:
        """Max |ch1+co1-dU|, |ch2+co2-dU| per student over defined entries."""
        g1 = np.abs(self.ch1 + self.co1 - self.delta_u)
        g2 = np.abs(self.ch2 + self.co2 - self.delta_u)
        return np.fmax(g1, g2)

    def rows(self) -> list[dict]:
        out = []
        for k, t in enumerate(self.students):
            row = {"student": t, "district": self.district[k]}
            for name in ("delta_u", "delta_u_km", "ch1", "co1", "ch2", "co2"):
                v = float(getattr(self, name)[k])
                row[name] = v
                row[f"{name}_defined"] = int(not math.isnan(v))
            out.append(row)
        return out


def compute_gains(realized: RealizedMarket, scheme: MatchingScheme | None = None,
                  distance_coef: float | None = None,
                  distance_sq_coef: float = 0.0) -> GainsReport:
    """Total gains, km-equivalents and the four decomposition terms."""
    m = realized.market
    scheme = compute_scheme(m) if scheme is None else scheme
    mu_c = scheme.consolidated.to_array(m)
    mu_d = scheme.district_matching().to_array(m)
    du = utility_gain(realized.U, mu_c, mu_d)
    if distance_coef is not None:
        d_at = np.zeros(len(du)) if realized.distance is None else \
            realized.distance[np.arange(len(du)), np.maximum(mu_c, 0)]
        km = km_equivalent(np.nan_to_num(du), distance_coef, distance_sq_coef, d_at)
        km = np.where(np.isnan(du), np.nan, km)
    else:
        km = np.full(len(du), np.nan)
    cap = m.capacity_array
    parts = decompose(realized.U, realized.V, mu_d, mu_c, realized.student_district,
                      realized.school_district, cap, realized.acceptable)
    return GainsReport(
        students=m.students,
        district=tuple(m.district_of[t] for t in m.students),
        delta_u=du, delta_u_km=km, **parts,
        classification=classify_welfare(m, scheme),
        scheme=scheme,
        cutoffs_district=cutoffs(mu_d, realized.V, cap),
        cutoffs_consolidated=cutoffs(mu_c, realized.V, cap),
    )


def summary(values) -> dict:
    """Mean, sd, min, median, max and N over defined values."""
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return {"mean": None, "sd": None, "min": None, "median": None, "max": None, "N": 0}
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "min": float(x.min()), "median": float(np.median(x)),
            "max": float(x.max()), "N": int(x.size)}


def gains_summary(report: GainsReport) -> dict:
    """Summary blocks for the total gain and each decomposition term."""
    out = {"total": summary(report.delta_u)}
    if not np.all(np.isnan(report.delta_u_km)):
        out["total_km"] = summary(report.delta_u_km)
    for name in ("ch1", "co1", "ch2", "co2"):
        out[name] = summary(getattr(report, name))
    return out


def district_table(market: Market, report: GainsReport) -> list[dict]:
    """Per-district seats, students, loser/indifferent/winner/unmatched counts."""
    cls = report.classification
    rows = []
    counts = market.district_counts()
    du = report.delta_u
    for d in market.districts:
        members = market.students_in(d)
        sub = cls.restrict(members)
        idx = [market.student_index[t] for t in members]
        vals = du[idx]
        c = counts[d]
        rows.append({
            "district": d, "seats": c["seats"], "students": c["students"],
            "excess_seats": c["excess_seats"], **sub.counts(),
            "mean_gain": float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else float("nan"),
            "winners_share": sub.winners_share,
        })
    tot = {"district": "Total", "seats": sum(r["seats"] for r in rows),
           "students": sum(r["students"] for r in rows)}
    tot["excess_seats"] = tot["seats"] - tot["students"]
    for k in ("-", "0", "+", "unmatched"):
        tot[k] = sum(r[k] for r in rows)
    tot["mean_gain"] = float(np.nanmean(du)) if np.any(~np.isnan(du)) else float("nan")
    tot["winners_share"] = cls.winners_share
    rows.append(tot)
    return rows


def synthetic_city(n_districts: int = 4, students_per_district: Sequence[int] | int = 60,
                   schools_per_district: int = 3, seat_ratio: Sequence[float] | float = 1.1,
                   distance_weight: float = 2.0, quality_sd: float = 0.3,
                   seed: int = 0) -> RealizedMarket:
    """Districts laid out on a line with nearby-school preferences.

    U_t(s) = quality_s - distance_weight * d_ts + eps and V_s(t) = a_t + eta,
    with district centres one unit apart and locations uniform within.
    """
    rng = rng_for(seed, 0)
    n_t = np.broadcast_to(np.asarray(students_per_district), (n_districts,))
    ratio = np.broadcast_to(np.asarray(seat_ratio, dtype=float), (n_districts,))
    students, schools, district_of, cap = [], [], {}, {}
    t_pos, s_pos = [], []
    for d in range(n_districts):
        label = f"D{d + 1}"
        for _ in range(int(n_t[d])):
            t = f"t{len(students) + 1}"
            students.append(t)
            district_of[t] = label
            t_pos.append(d + rng.uniform(-0.5, 0.5))
        seats = largest_remainder(rng.uniform(0.5, 1.5, schools_per_district),
                                  max(int(round(ratio[d] * n_t[d])), schools_per_district))
        for k in range(schools_per_district):
            s = f"s{len(schools) + 1}"
            schools.append(s)
            district_of[s] = label
            cap[s] = int(seats[k])
            s_pos.append(d + rng.uniform(-0.4, 0.4))
    dist = np.abs(np.subtract.outer(np.array(t_pos), np.array(s_pos)))
    quality = quality_sd * rng.standard_normal(len(schools))
    ability = rng.standard_normal(len(students))
    U = quality[None, :] - distance_weight * dist + rng.standard_normal(dist.shape)
    V = ability[None, :] + rng.standard_normal((len(schools), len(students)))
    return RealizedMarket.from_latents(students, schools, cap, district_of, U, V,
                                       distance=dist)


def balanced(realized: RealizedMarket) -> RealizedMarket:
    return realized.with_market(balance_capacities(realized.market))


def as_matching(market: Market, mu: np.ndarray) -> Matching:
    return Matching.from_array(market, mu)
