from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from consolidation import Market
from consolidation.io import read_market

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def example1() -> Market:
    return read_market(FIXTURES / "example1")


@pytest.fixture
def example1_dir() -> Path:
    return FIXTURES / "example1"


def random_market(rng: np.random.Generator, n_t: int, n_s: int, q_max: int = 2,
                  partial: bool = False, n_districts: int = 1) -> Market:
    """Small random market, optionally with truncated lists on both sides."""
    students = tuple(f"t{i}" for i in range(n_t))
    schools = tuple(f"s{j}" for j in range(n_s))
    prefs, prios = {}, {}
    for t in students:
        order = list(rng.permutation(schools))
        prefs[t] = tuple(order[: rng.integers(0, n_s + 1)] if partial else order)
    for s in schools:
        order = list(rng.permutation(students))
        prios[s] = tuple(order[: rng.integers(0, n_t + 1)] if partial else order)
    district_of = {t: f"D{i % n_districts}" for i, t in enumerate(students)}
    district_of.update({s: f"D{j % n_districts}" for j, s in enumerate(schools)})
    capacity = {s: int(rng.integers(1, q_max + 1)) for s in schools}
    return Market(students, schools, capacity, district_of, prefs, prios,
                  complete=not partial)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> str:
    line = f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = (ok, detail)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
