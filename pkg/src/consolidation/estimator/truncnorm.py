"""Unit-variance truncated normal sampling.

Central intervals use the inverse CDF, evaluated on the upper tail when the
interval lies above the mean so that small probabilities keep their
precision.  Intervals starting more than ``TAIL`` standard deviations out use
rejection: an exponential proposal (Robert, 1995) for wide intervals and a
uniform proposal for narrow ones.
"""
from __future__ import annotations

import math

import numba
import numpy as np

TAIL = 5.0
_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


@numba.njit(cache=True)
def ndtr_upper(x):
    """P(Z > x)."""
    return 0.5 * math.erfc(x / _SQRT2)


@numba.njit(cache=True)
def ndtri(p):
    """Standard normal quantile, refined by one Halley step."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement against the complementary error function
    e = 0.5 * math.erfc(-x / _SQRT2) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@numba.njit(cache=True)
def _tail(a, b, rng):
    """Draw from Z | a <= Z <= b for a >= TAIL."""
    if b - a < 1.0 / a:
        while True:
            x = a + (b - a) * rng.random()
            if rng.random() <= math.exp(0.5 * (a * a - x * x)):
                return x
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + rng.standard_exponential() / alpha
        if x > b:
            continue
        d = x - alpha
        if rng.random() <= math.exp(-0.5 * d * d):
            return x


@numba.njit(cache=True)
def _upper(a, b, u):
    """Inverse-CDF draw for 0 <= a < b, computed on survival probabilities."""
    pa = ndtr_upper(a)
    pb = ndtr_upper(b)
    return -ndtri(pa - u * (pa - pb))


@numba.njit(cache=True)
def standard_truncnorm(a, b, rng):
    """One draw from a standard normal restricted to [a, b]."""
    if a == b:
        return a
    if a >= TAIL:
        return _tail(a, b, rng)
    if b <= -TAIL:
        return -_tail(-b, -a, rng)
    u = rng.random()
    if a >= 0.0:
        x = _upper(a, b, u)
    elif b <= 0.0:
        x = -_upper(-b, -a, u)
    else:
        pa = 0.5 * math.erfc(-a / _SQRT2)
        pb = 0.5 * math.erfc(-b / _SQRT2)
        x = ndtri(pa + u * (pb - pa))
    # guard against rounding at the interval ends
    return min(max(x, a), b)


@numba.njit(cache=True)
def truncnorm_draw(mean, lo, hi, rng):
    """One draw from N(mean, 1) restricted to [lo, hi]; requires lo <= hi."""
    if lo == hi:
        return lo
    x = mean + standard_truncnorm(lo - mean, hi - mean, rng)
    # shifting back can round past an end when the interval is tiny relative to mean
    return min(max(x, lo), hi)


@numba.njit(cache=True)
def _fill(mean, lo, hi, rng, out):
    for i in range(out.size):
        out[i] = truncnorm_draw(mean[i], lo[i], hi[i], rng)


def sample_truncated_normal(mean, lo, hi, rng: np.random.Generator, size=None):
    """Draws from N(mean, 1) truncated to [lo, hi].

    Arguments broadcast against each other and ``size``.  Returns a float when
    every input is scalar and ``size`` is None.
    """
    mean_a, lo_a, hi_a = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mean, lo, hi)))
    if size is not None:
        shape = (size,) if np.isscalar(size) else tuple(size)
        mean_a, lo_a, hi_a = (np.broadcast_to(v, shape) for v in (mean_a, lo_a, hi_a))
    if np.any(np.isnan(lo_a) | np.isnan(hi_a) | np.isnan(mean_a)):
        raise ValueError("truncation bounds and means must not be NaN")
    if np.any(lo_a > hi_a):
        raise ValueError("empty truncation interval: lo > hi")
    out = np.empty(mean_a.shape)
    _fill(np.ascontiguousarray(mean_a).ravel(), np.ascontiguousarray(lo_a).ravel(),
          np.ascontiguousarray(hi_a).ravel(), rng, out.reshape(-1))
    if out.ndim == 0:
        return float(out)
    return out
