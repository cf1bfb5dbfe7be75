"""Extended school choice problems, matchings and matching schemes.

A :class:`Market` holds students, schools, capacities, district labels and the
two preference sides.  Lists may be partial (submitted rank-order lists) or
complete (realised orders); ``complete`` tells the two apart.  Anything not
listed on either side is treated as unacceptable when matching.
"""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

#: Priority sentinel for an applicant the school marked unacceptable.
PR_UNACCEPTABLE = np.iinfo(np.int64).max // 4


class MarketError(ValueError):
    """Raised when an operation needs a valid market and does not get one."""


class IncompletePreferencesError(MarketError):
    pass


class MarketWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.entity}: [{self.rule}] {self.message}"


def _freeze(mapping, value=lambda v: v):
    return MappingProxyType({k: value(v) for k, v in dict(mapping).items()})


@dataclass(frozen=True, eq=False)
class Market:
    """An extended school choice problem.

    ``student_prefs[t]`` is t's ordered list of schools (best first).
    ``school_priorities[s]`` is s's ordered list of acceptable students and
    ``unacceptable[s]`` the applicants it ranked as unacceptable.  Covariates
    are optional: per-student and per-school dicts of named floats, and
    per-pair dicts keyed by ``(student, school)``.
    """

    students: tuple[str, ...]
    schools: tuple[str, ...]
    capacity: Mapping[str, int]
    district_of: Mapping[str, str]
    student_prefs: Mapping[str, tuple[str, ...]]
    school_priorities: Mapping[str, tuple[str, ...]]
    unacceptable: Mapping[str, frozenset] = field(default_factory=dict)
    complete: bool = False
    student_covariates: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    school_covariates: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    pair_covariates: Mapping[tuple[str, str], Mapping[str, float]] = field(
        default_factory=dict
    )

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "students", tuple(self.students))
        set_(self, "schools", tuple(self.schools))
        set_(self, "capacity", _freeze(self.capacity, int))
        set_(self, "district_of", _freeze(self.district_of, str))
        prefs = {t: () for t in self.students}
        prefs.update({t: tuple(v) for t, v in dict(self.student_prefs).items()})
        set_(self, "student_prefs", MappingProxyType(prefs))
        prios = {s: () for s in self.schools}
        prios.update({s: tuple(v) for s, v in dict(self.school_priorities).items()})
        set_(self, "school_priorities", MappingProxyType(prios))
        set_(self, "unacceptable", _freeze(self.unacceptable, frozenset))
        set_(self, "student_covariates", _freeze(self.student_covariates, dict))
        set_(self, "school_covariates", _freeze(self.school_covariates, dict))
        set_(self, "pair_covariates", _freeze(self.pair_covariates, dict))

    # -- derived quantities -------------------------------------------------

    @cached_property
    def districts(self) -> tuple[str, ...]:
        seen = dict.fromkeys(
            self.district_of[x]
            for x in self.students + self.schools
            if x in self.district_of
        )
        return tuple(seen)

    def students_in(self, district: str) -> tuple[str, ...]:
        return tuple(t for t in self.students if self.district_of.get(t) == district)

    def schools_in(self, district: str) -> tuple[str, ...]:
        return tuple(s for s in self.schools if self.district_of.get(s) == district)

    def district_counts(self) -> dict[str, dict[str, int]]:
        """Students, schools, seats and excess seats per district."""
        out = {}
        for d in self.districts:
            schools = self.schools_in(d)
            seats = sum(self.capacity.get(s, 0) for s in schools)
            n_students = len(self.students_in(d))
            out[d] = {
                "students": n_students,
                "schools": len(schools),
                "seats": seats,
                "excess_seats": seats - n_students,
            }
        return out

    @property
    def total_excess_seats(self) -> int:
        return sum(self.capacity.values()) - len(self.students)

    @cached_property
    def student_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.students)}

    @cached_property
    def school_index(self) -> dict[str, int]:
        return {s: j for j, s in enumerate(self.schools)}

    @cached_property
    def pref_indices(self) -> tuple[tuple[int, ...], ...]:
        idx = self.school_index
        return tuple(tuple(idx[s] for s in self.student_prefs[t]) for t in self.students)

    @cached_property
    def priority_rank(self) -> np.ndarray:
        """(S, T) array: 0-based priority position, -1 if not acceptable."""
        out = np.full((len(self.schools), len(self.students)), -1, dtype=np.int64)
        idx = self.student_index
        for j, s in enumerate(self.schools):
            for r, t in enumerate(self.school_priorities[s]):
                out[j, idx[t]] = r
        return out

    @cached_property
    def capacity_array(self) -> np.ndarray:
        return np.array([self.capacity[s] for s in self.schools], dtype=np.int64)

    def with_districts(self, district_of: Mapping[str, str]) -> "Market":
        return replace(self, district_of=dict(district_of))


@dataclass(frozen=True, eq=False)
class Matching:
    """Assignment of students to schools; ``None`` means unmatched (mu(t) = t)."""

    assignment: Mapping[str, str | None]

    def __post_init__(self):
        object.__setattr__(self, "assignment", MappingProxyType(dict(self.assignment)))

    @classmethod
    def from_roster(cls, roster: Mapping[str, Iterable[str]], students: Iterable[str]):
        assignment = dict.fromkeys(students)
        for s, members in roster.items():
            for t in members:
                if assignment.get(t) is not None:
                    raise MarketError(f"student {t} appears in two rosters")
                assignment[t] = s
        return cls(assignment)

    @cached_property
    def _roster(self) -> dict[str, frozenset]:
        out: dict[str, set] = {}
        for t, s in self.assignment.items():
            if s is not None:
                out.setdefault(s, set()).add(t)
        return {s: frozenset(v) for s, v in out.items()}

    def school_of(self, student: str) -> str | None:
        return self.assignment.get(student)

    def roster(self, school: str) -> frozenset:
        return self._roster.get(school, frozenset())

    @property
    def students(self) -> tuple[str, ...]:
        return tuple(self.assignment)

    def matched(self) -> tuple[str, ...]:
        return tuple(t for t, s in self.assignment.items() if s is not None)

    def restrict(self, students: Iterable[str]) -> "Matching":
        return Matching({t: self.assignment.get(t) for t in students})

    def to_array(self, market: Market) -> np.ndarray:
        """School index per student in market order, -1 when unmatched."""
        idx = market.school_index
        return np.array(
            [idx[s] if (s := self.assignment.get(t)) is not None else -1
             for t in market.students],
            dtype=np.int64,
        )

    @classmethod
    def from_array(cls, market: Market, mu: np.ndarray) -> "Matching":
        return cls({t: (market.schools[j] if j >= 0 else None)
                    for t, j in zip(market.students, mu)})

    def __eq__(self, other):
        if not isinstance(other, Matching):
            return NotImplemented
        return dict(self.assignment) == dict(other.assignment)

    def __hash__(self):
        return hash(frozenset(self.assignment.items()))

    def __repr__(self):
        pairs = ", ".join(f"{t}->{s}" for t, s in self.assignment.items())
        return f"Matching({pairs})"


def check_matching(market: Market, matching: Matching) -> None:
    """Raise MarketError unless ``matching`` fits the market's ids and capacities."""
    known_t = market.student_index
    known_s = market.school_index
    for t, s in matching.assignment.items():
        if t not in known_t:
            raise MarketError(f"matching references unknown student {t!r}")
        if s is not None and s not in known_s:
            raise MarketError(f"matching references unknown school {s!r}")
    for s in market.schools:
        if len(matching.roster(s)) > market.capacity[s]:
            raise MarketError(f"school {s!r} is over capacity")


@dataclass(frozen=True)
class MatchingScheme:
    per_district: Mapping[str, Matching]
    consolidated: Matching

    def district_school(self, market: Market, student: str) -> str | None:
        return self.per_district[market.district_of[student]].school_of(student)

    def district_matching(self) -> Matching:
        """All per-district matchings merged into one assignment."""
        merged: dict[str, str | None] = {}
        for m in self.per_district.values():
            merged.update(m.assignment)
        return Matching(merged)


class RankData:
    """Submitted ranks rk[t, s] and priorities pr[s, t] as dense integer arrays.

    ``rk`` is (T, S) with 0 for "not ranked" and 1..L_t otherwise.  ``pr`` is
    (S, T) with 0 for "did not apply", :data:`PR_UNACCEPTABLE` for applicants
    marked unacceptable and 1..|l_s| for ranked acceptable applicants.
    """

    def __init__(self, students, schools, rols, priorities, unacceptable=None):
        self.students = tuple(students)
        self.schools = tuple(schools)
        t_idx = {t: i for i, t in enumerate(self.students)}
        s_idx = {s: j for j, s in enumerate(self.schools)}
        T, S = len(self.students), len(self.schools)
        self.rk = np.zeros((T, S), dtype=np.int64)
        self.pr = np.zeros((S, T), dtype=np.int64)
        for t, lst in rols.items():
            for r, s in enumerate(lst, start=1):
                self.rk[t_idx[t], s_idx[s]] = r
        for s, lst in priorities.items():
            for r, t in enumerate(lst, start=1):
                self.pr[s_idx[s], t_idx[t]] = r
        for s, bad in (unacceptable or {}).items():
            for t in bad:
                self.pr[s_idx[s], t_idx[t]] = PR_UNACCEPTABLE

    @classmethod
    def from_market(cls, market: Market) -> "RankData":
        return cls(market.students, market.schools, market.student_prefs,
                   market.school_priorities, market.unacceptable)

    @classmethod
    def submitted(cls, market: Market) -> "RankData":
        """Rank data with each school's list cut down to its applicants."""
        applied: dict[str, set] = {s: set() for s in market.schools}
        for t in market.students:
            for s in market.student_prefs[t]:
                applied[s].add(t)
        prios = {s: [t for t in market.school_priorities[s] if t in applied[s]]
                 for s in market.schools}
        unacc = {s: [t for t in market.unacceptable.get(s, ()) if t in applied[s]]
                 for s in market.schools}
        return cls(market.students, market.schools, market.student_prefs, prios, unacc)

    @classmethod
    def from_arrays(cls, students, schools, rk, pr) -> "RankData":
        obj = cls.__new__(cls)
        obj.students, obj.schools = tuple(students), tuple(schools)
        obj.rk = np.asarray(rk, dtype=np.int64)
        obj.pr = np.asarray(pr, dtype=np.int64)
        return obj

    @property
    def list_lengths(self) -> np.ndarray:
        return (self.rk > 0).sum(axis=1)

    def rank(self, t: int, s: int) -> int | None:
        r = int(self.rk[t, s])
        return r or None

    def priority(self, s: int, t: int) -> float | None:
        p = int(self.pr[s, t])
        if p == 0:
            return None
        return float("inf") if p == PR_UNACCEPTABLE else p

    def check(self) -> list[str]:
        """Invariant problems: gapless ranks/priorities, pr only for applicants."""
        problems = []
        for i in range(self.rk.shape[0]):
            r = np.sort(self.rk[i][self.rk[i] > 0])
            if not np.array_equal(r, np.arange(1, len(r) + 1)):
                problems.append(f"student {self.students[i]}: ranks not 1..K_t")
        for j in range(self.pr.shape[0]):
            p = self.pr[j]
            fin = np.sort(p[(p > 0) & (p != PR_UNACCEPTABLE)])
            if not np.array_equal(fin, np.arange(1, len(fin) + 1)):
                problems.append(f"school {self.schools[j]}: priorities not 1..|l_s|")
            applied = self.rk[:, j] > 0
            if np.any((p != 0) & ~applied):
                problems.append(f"school {self.schools[j]}: ranks a non-applicant")
        return problems


def validate_market(market: Market) -> list[Violation]:
    """Every broken Market invariant as a violation record; [] when valid.

    A society with fewer seats than students only triggers a
    :class:`MarketWarning`.
    """
    out: list[Violation] = []
    students, schools = market.students, market.schools

    for kind, ids in (("student", students), ("school", schools)):
        for x, n in Counter(ids).items():
            if n > 1:
                out.append(Violation(x, "unique-id", f"{kind} id listed {n} times"))
    for x in set(students) & set(schools):
        out.append(Violation(x, "unique-id", "id used for a student and a school"))

    known_t, known_s = set(students), set(schools)
    for x in students + schools:
        if x not in market.district_of:
            out.append(Violation(x, "district-label", "no district label"))
    for s in schools:
        q = market.capacity.get(s)
        if q is None or q <= 0:
            out.append(Violation(s, "capacity", f"capacity must be positive, got {q}"))

    for d in market.districts:
        n_t, n_s = len(market.students_in(d)), len(market.schools_in(d))
        if n_t == 0 or n_s == 0:
            out.append(Violation(
                d, "district",
                f"district needs >=1 student and >=1 school ({n_t} students, {n_s} schools)",
            ))

    for t in students:
        lst = market.student_prefs[t]
        if len(set(lst)) != len(lst):
            out.append(Violation(t, "strict-order", "duplicate school in preference list"))
        unknown = [s for s in lst if s not in known_s]
        if unknown:
            out.append(Violation(t, "unknown-id", f"unknown schools {unknown}"))
        if market.complete and set(lst) != known_s:
            out.append(Violation(t, "completeness", "preference list is not complete"))
    for s in schools:
        lst = market.school_priorities[s]
        bad = market.unacceptable.get(s, frozenset())
        if len(set(lst)) != len(lst):
            out.append(Violation(s, "strict-order", "duplicate student in priority list"))
        unknown = [t for t in list(lst) + sorted(bad) if t not in known_t]
        if unknown:
            out.append(Violation(s, "unknown-id", f"unknown students {unknown}"))
        if set(lst) & bad:
            out.append(Violation(s, "strict-order", "student both ranked and unacceptable"))
        if market.complete and set(lst) | bad != known_t:
            out.append(Violation(s, "completeness", "priority list is not complete"))
    for key in market.pair_covariates:
        t, s = key
        if t not in known_t or s not in known_s:
            out.append(Violation(f"{t}|{s}", "unknown-id", "pair covariate for unknown ids"))

    if market.total_excess_seats < 0:
        warnings.warn(
            f"society is overdemanded: {-market.total_excess_seats} more students than seats",
            MarketWarning, stacklevel=2,
        )
    return out


_STRUCTURAL = {"unique-id", "capacity", "strict-order", "unknown-id"}


def require_valid(market: Market, *, districts: bool = False) -> None:
    """Raise MarketError on structural violations (and district ones if asked)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarketWarning)
        problems = validate_market(market)
    rules = _STRUCTURAL | ({"district", "district-label"} if districts else set())
    fatal = [v for v in problems if v.rule in rules]
    if fatal:
        raise MarketError("; ".join(map(str, fatal)))


def restrict_to_district(market: Market, district: str) -> Market:
    """Sub-market of one district; lists filtered, relative order kept."""
    if district not in market.districts:
        raise MarketError(f"unknown district {district!r}")
    students = market.students_in(district)
    schools = market.schools_in(district)
    keep_t, keep_s = set(students), set(schools)
    return Market(
        students=students,
        schools=schools,
        capacity={s: market.capacity[s] for s in schools},
        district_of={x: district for x in students + schools},
        student_prefs={t: tuple(s for s in market.student_prefs[t] if s in keep_s)
                       for t in students},
        school_priorities={s: tuple(t for t in market.school_priorities[s] if t in keep_t)
                           for s in schools},
        unacceptable={s: market.unacceptable.get(s, frozenset()) & keep_t for s in schools},
        complete=market.complete,
        student_covariates={t: market.student_covariates[t]
                            for t in students if t in market.student_covariates},
        school_covariates={s: market.school_covariates[s]
                           for s in schools if s in market.school_covariates},
        pair_covariates={k: v for k, v in market.pair_covariates.items()
                         if k[0] in keep_t and k[1] in keep_s},
    )


def absolute_rank(market: Market, student: str, school: str) -> int:
    """Position of ``school`` in the student's complete preference list (1 = best)."""
    prefs = market.student_prefs[student]
    if len(prefs) != len(market.schools) or school not in prefs:
        raise IncompletePreferencesError(
            f"student {student!r} has no complete preference list covering {school!r}"
        )
    return prefs.index(school) + 1


def relative_rank(market: Market, student: str, school: str) -> int:
    """Position of ``school`` among the schools of the student's own district."""
    d = market.district_of[student]
    if market.district_of[school] != d:
        raise MarketError(f"{school!r} is outside the district of {student!r}")
    prefs = market.student_prefs[student]
    if school not in prefs:
        raise IncompletePreferencesError(f"{school!r} not ranked by {student!r}")
    cut = prefs.index(school)
    return sum(1 for s in prefs[: cut + 1] if market.district_of[s] == d)
