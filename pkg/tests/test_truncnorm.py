import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from consolidation.estimator import sample_truncated_normal
from consolidation.estimator.truncnorm import ndtri


def truncated_mean(a, b):
    """E[Z | a <= Z <= b] for a standard normal, from survival functions."""
    mass = stats.norm.sf(a) - stats.norm.sf(b)
    return (stats.norm.pdf(a) - stats.norm.pdf(b)) / mass


def test_ndtri_matches_scipy():
    p = np.concatenate([np.logspace(-300, -1, 200), np.linspace(0.01, 0.99, 99),
                        1 - np.logspace(-15, -1, 50)])
    ours = np.array([ndtri(x) for x in p])
    assert np.max(np.abs(ours - special.ndtri(p))) < 1e-8


def test_untruncated_mean():
    x = sample_truncated_normal(0.0, -np.inf, np.inf, np.random.default_rng(0), size=10**6)
    assert abs(x.mean()) < 0.004
    assert x.std() == pytest.approx(1.0, abs=0.005)


def test_half_normal_mean():
    x = sample_truncated_normal(0.0, 0.0, np.inf, np.random.default_rng(1), size=10**6)
    assert x.min() >= 0
    assert x.mean() == pytest.approx(math.sqrt(2 / math.pi), rel=0.01)


def test_deep_tail_interval():
    x = sample_truncated_normal(0.0, 8.0, 9.0, np.random.default_rng(2), size=10**5)
    assert np.all(np.isfinite(x)) and x.min() >= 8.0 and x.max() <= 9.0
    assert x.mean() == pytest.approx(truncated_mean(8.0, 9.0), abs=2e-3)


def test_lower_deep_tail_and_shifted_mean():
    x = sample_truncated_normal(3.0, -np.inf, -7.0, np.random.default_rng(3), size=10**4)
    assert np.all(x <= -7.0) and np.all(np.isfinite(x))
    assert x.mean() == pytest.approx(3.0 - truncated_mean(10.0, np.inf), abs=5e-3)


@pytest.mark.parametrize("a,b", [(-1.0, 0.5), (0.3, 2.0), (-3.0, -2.5), (4.5, 6.0),
                                 (5.5, np.inf), (-np.inf, -6.0), (2.0, 2.001)])
def test_distribution_ks(a, b):
    x = sample_truncated_normal(0.0, a, b, np.random.default_rng(4), size=20_000)
    ref = stats.truncnorm(a, b)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_degenerate_interval():
    assert sample_truncated_normal(0.3, 1.5, 1.5, np.random.default_rng(0)) == 1.5


def test_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_truncated_normal(0.0, 1.0, 0.0, rng)
    with pytest.raises(ValueError):
        sample_truncated_normal(np.nan, 0.0, 1.0, rng)


def test_scalar_and_broadcast():
    rng = np.random.default_rng(0)
    assert isinstance(sample_truncated_normal(0.0, -1.0, 1.0, rng), float)
    out = sample_truncated_normal(np.zeros(3), [-1, 0, 1], [0, 1, 2], rng)
    assert out.shape == (3,) and np.all((out >= [-1, 0, 1]) & (out <= [0, 1, 2]))


def test_shares_generator_state():
    a = sample_truncated_normal(0.0, 0.0, 1.0, np.random.default_rng(9), size=5)
    b = sample_truncated_normal(0.0, 0.0, 1.0, np.random.default_rng(9), size=5)
    assert np.array_equal(a, b)


@given(st.floats(-20, 20), st.floats(-30, 30), st.floats(0, 10), st.integers(0, 2**31))
def test_draw_stays_in_interval(mean, lo, width, seed):
    x = sample_truncated_normal(mean, lo, lo + width, np.random.default_rng(seed))
    assert lo <= x <= lo + width
