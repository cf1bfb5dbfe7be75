import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from consolidation import Market, Matching, RankData, restrict_to_district, validate_market
from consolidation.market import (
    PR_UNACCEPTABLE,
    IncompletePreferencesError,
    MarketError,
    MarketWarning,
    absolute_rank,
    check_matching,
    relative_rank,
    require_valid,
)
from conftest import random_market


def tiny(**kw):
    base = dict(students=("t1",), schools=("s1",), capacity={"s1": 1},
                district_of={"t1": "D", "s1": "D"}, student_prefs={"t1": ("s1",)},
                school_priorities={"s1": ("t1",)}, complete=True)
    base.update(kw)
    return Market(**base)


def test_minimal_market_is_valid():
    assert validate_market(tiny()) == []


def test_district_without_students_is_flagged():
    m = tiny(schools=("s1", "s2"), capacity={"s1": 1, "s2": 1},
             district_of={"t1": "D", "s1": "D", "s2": "E"}, complete=False)
    rules = [(v.entity, v.rule) for v in validate_market(m)]
    assert rules == [("E", "district")]


def test_duplicate_school_in_list_names_student():
    m = tiny(student_prefs={"t1": ("s1", "s1")}, complete=False)
    v = validate_market(m)
    assert len(v) == 1 and v[0].entity == "t1" and v[0].rule == "strict-order"


def test_structural_rules():
    m = tiny(capacity={"s1": 0}, school_priorities={"s1": ("t1", "tx")}, complete=False)
    assert {v.rule for v in validate_market(m)} == {"capacity", "unknown-id"}
    with pytest.raises(MarketError):
        require_valid(m)


def test_completeness_rule():
    m = tiny(schools=("s1", "s2"), capacity={"s1": 1, "s2": 1},
             district_of={"t1": "D", "s1": "D", "s2": "D"})
    assert {v.rule for v in validate_market(m)} == {"completeness"}


def test_overdemanded_society_warns_only():
    m = tiny(students=("t1", "t2"), district_of={"t1": "D", "t2": "D", "s1": "D"},
             student_prefs={"t1": ("s1",), "t2": ("s1",)},
             school_priorities={"s1": ("t1", "t2")})
    with pytest.warns(MarketWarning):
        assert validate_market(m) == []


def test_district_counts(example1):
    c = example1.district_counts()
    assert c["D1"] == {"students": 2, "schools": 2, "seats": 2, "excess_seats": 0}
    assert example1.total_excess_seats == 0


def test_restrict_example1(example1):
    d1 = restrict_to_district(example1, "D1")
    assert d1.students == ("t1", "t2") and d1.schools == ("s1", "s2")
    assert d1.student_prefs["t1"] == ("s2", "s1")
    assert d1.school_priorities["s1"] == ("t1", "t2")
    assert validate_market(d1) == []


def test_restrict_single_district_is_identity():
    m = random_market(np.random.default_rng(0), 4, 3)
    r = restrict_to_district(m, "D0")
    assert r.students == m.students and dict(r.student_prefs) == dict(m.student_prefs)


def test_restrict_unknown_district(example1):
    with pytest.raises(MarketError):
        restrict_to_district(example1, "nope")


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_restriction_preserves_within_district_order(seed, n_d):
    rng = np.random.default_rng(seed)
    m = random_market(rng, 6, 4, n_districts=n_d)
    for d in m.districts:
        if not m.students_in(d) or not m.schools_in(d):
            continue
        r = restrict_to_district(m, d)
        assert validate_market(r) == []
        for t in r.students:
            full = [s for s in m.student_prefs[t] if m.district_of[s] == d]
            assert list(r.student_prefs[t]) == full
        for s in r.schools:
            full = [t for t in m.school_priorities[s] if m.district_of[t] == d]
            assert list(r.school_priorities[s]) == full


def test_absolute_rank_example1(example1):
    assert absolute_rank(example1, "t1", "s2") == 1
    assert absolute_rank(example1, "t3", "s2") == 3


@given(st.integers(0, 10_000))
def test_absolute_rank_is_bijection(seed):
    m = random_market(np.random.default_rng(seed), 3, 5)
    for t in m.students:
        ranks = sorted(absolute_rank(m, t, s) for s in m.schools)
        assert ranks == list(range(1, 6))
        assert sum(ranks) == 5 * 6 // 2
        assert absolute_rank(m, t, m.student_prefs[t][0]) == 1


def test_absolute_rank_needs_complete_list():
    m = tiny(schools=("s1", "s2"), capacity={"s1": 1, "s2": 1},
             district_of={"t1": "D", "s1": "D", "s2": "D"}, complete=False)
    with pytest.raises(IncompletePreferencesError):
        absolute_rank(m, "t1", "s1")


def test_relative_rank(example1):
    assert relative_rank(example1, "t1", "s1") == 2
    assert relative_rank(example1, "t3", "s3") == 1
    with pytest.raises(MarketError):
        relative_rank(example1, "t3", "s1")


def test_matching_round_trips(example1):
    m = Matching({"t1": "s2", "t2": None, "t3": "s3"})
    assert m.roster("s2") == {"t1"} and m.school_of("t2") is None
    arr = m.to_array(example1)
    assert arr.tolist() == [1, -1, 2]
    assert Matching.from_array(example1, arr) == m
    roster = Matching.from_roster({"s2": ["t1"], "s3": ["t3"]}, ["t1", "t2", "t3"])
    assert roster == m and hash(roster) == hash(m)


def test_check_matching_capacity(example1):
    with pytest.raises(MarketError):
        check_matching(example1, Matching({"t1": "s1", "t2": "s1", "t3": None}))
    with pytest.raises(MarketError):
        Matching.from_roster({"s1": ["t1"], "s2": ["t1"]}, ["t1"])


def test_rank_data_sentinels():
    rd = RankData(("a", "b"), ("x", "y"), {"a": ["y", "x"], "b": ["x"]},
                  {"x": ["b"], "y": []}, {"x": ["a"], "y": ["a"]})
    assert rd.rank(0, 1) == 1 and rd.rank(1, 1) is None
    assert rd.priority(0, 1) == 1 and rd.priority(0, 0) == float("inf")
    assert rd.priority(1, 1) is None and rd.pr[1, 0] == PR_UNACCEPTABLE
    assert rd.list_lengths.tolist() == [2, 1]
    assert rd.check() == []


def test_rank_data_flags_non_applicant():
    rd = RankData(("a",), ("x",), {"a": []}, {"x": ["a"]})
    assert any("non-applicant" in p for p in rd.check())


def test_submitted_rank_data_cuts_non_applicants(example1):
    m = Market(example1.students, example1.schools, example1.capacity, example1.district_of,
               {"t1": ("s2",), "t2": ("s1", "s2"), "t3": ()},
               example1.school_priorities)
    rd = RankData.submitted(m)
    assert rd.check() == []
    assert rd.priority(1, 0) == 2 and rd.priority(1, 1) == 1  # s2 ranks t2 above t1
