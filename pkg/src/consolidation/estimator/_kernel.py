"""Compiled truncation bounds and latent sweeps for the Gibbs sampler.

Array conventions (0-based indices, T students, S schools):

* ``rk[t, s]``: submitted rank, 0 when s is not listed by t.
* ``rol[t, k]``: school listed at rank k + 1, padded with -1; ``L[t]`` its length.
* ``pr[s, t]``: priority, 0 for non-applicants, ``PRU`` for unacceptable ones.
* ``plist[s, k]``: acceptable applicant with priority k + 1; ``nacc[s]`` count.
* ``ulist[s, k]``: applicants marked unacceptable; ``nun[s]`` count.
* ``mu[t]``: assigned school or -1; ``members[s, k]`` roster padded with -1.
"""
from __future__ import annotations

import numba
import numpy as np

from ..market import PR_UNACCEPTABLE as PRU
from .truncnorm import truncnorm_draw

WTT, UNDOM, STABILITY, STAB_UNDOM = 0, 1, 2, 3
INF = np.inf


@numba.njit(cache=True)
def _uses_ranks(mode):
    return mode == WTT or mode == UNDOM or mode == STAB_UNDOM


@numba.njit(cache=True)
def _uses_stability(mode):
    return mode == STABILITY or mode == STAB_UNDOM


@numba.njit(cache=True)
def student_feasible(V, pr, members, load, cap):
    """F[t, s]: s does not reject t and has a vacancy or a member t outranks."""
    S, T = V.shape
    F = np.zeros((T, S), dtype=np.bool_)
    for s in range(S):
        full = load[s] >= cap[s]
        cut = INF
        if full:
            for k in range(load[s]):
                v = V[s, members[s, k]]
                if v < cut:
                    cut = v
        for t in range(T):
            if pr[s, t] == PRU:
                continue
            if (not full) or V[s, t] > cut:
                F[t, s] = True
    return F


@numba.njit(cache=True)
def school_feasible(U, pr, mu):
    """F[s, t]: t is not unacceptable to s and would leave mu(t) for s."""
    T, S = U.shape
    F = np.zeros((S, T), dtype=np.bool_)
    for t in range(T):
        m = mu[t]
        for s in range(S):
            if pr[s, t] == PRU:
                continue
            if m < 0 or U[t, s] > U[t, m]:
                F[s, t] = True
    return F


@numba.njit(cache=True)
def u_bounds(t, s, mode, U, rk, rol, L, mu, Ft):
    """Truncation interval for U[t, s]."""
    S = U.shape[1]
    lo = -INF
    hi = INF
    if _uses_ranks(mode):
        r = rk[t, s]
        n = L[t]
        if mode == WTT:
            if r == 0:
                for k in range(n):
                    hi = min(hi, U[t, rol[t, k]])
            else:
                for k in range(r - 1):
                    hi = min(hi, U[t, rol[t, k]])
                if r < n:
                    for k in range(r, n):
                        lo = max(lo, U[t, rol[t, k]])
                elif n < S:
                    for j in range(S):
                        if rk[t, j] == 0:
                            lo = max(lo, U[t, j])
        else:
            if r > 1:
                for k in range(r - 1):
                    hi = min(hi, U[t, rol[t, k]])
            if r >= 1 and r < n:
                for k in range(r, n):
                    lo = max(lo, U[t, rol[t, k]])
    if _uses_stability(mode):
        m = mu[t]
        if m >= 0 and m != s and Ft[t, s]:
            hi = min(hi, U[t, m])
        if m == s:
            best = -INF
            for j in range(S):
                if j != s and Ft[t, j]:
                    best = max(best, U[t, j])
            lo = max(lo, best)
    return lo, hi


@numba.njit(cache=True)
def v_bounds(s, t, mode, V, pr, plist, nacc, ulist, nun, mu, members, load, cap, Fs):
    """Truncation interval for V[s, t]."""
    T = V.shape[1]
    lo = -INF
    hi = INF
    if _uses_ranks(mode):
        p = pr[s, t]
        if p == PRU:
            for k in range(nacc[s]):
                hi = min(hi, V[s, plist[s, k]])
        elif p > 0:
            for k in range(p - 1):
                hi = min(hi, V[s, plist[s, k]])
            for k in range(p, nacc[s]):
                lo = max(lo, V[s, plist[s, k]])
            for k in range(nun[s]):
                lo = max(lo, V[s, ulist[s, k]])
    if _uses_stability(mode) and load[s] >= cap[s]:
        if mu[t] == s:
            best = -INF
            for j in range(T):
                if mu[j] != s and Fs[s, j]:
                    best = max(best, V[s, j])
            lo = max(lo, best)
        elif Fs[s, t]:
            cut = INF
            for k in range(load[s]):
                cut = min(cut, V[s, members[s, k]])
            hi = min(hi, cut)
    return lo, hi


@numba.njit(cache=True)
def sweep(U, V, MU, MV, Uread, Vread, mode, rk, rol, L, pr, plist, nacc, ulist, nun,
          mu, members, load, cap, rng, counts):
    """One pass over U (students, then schools within student) and then V.

    ``Uread``/``Vread`` alias ``U``/``V`` for Gauss-Seidel updates or hold a
    snapshot for the last-iteration variant.  ``counts`` accumulates
    [clamped U, clamped V, non-finite draws].
    """
    T, S = U.shape
    Ft = student_feasible(Vread, pr, members, load, cap)
    for t in range(T):
        for s in range(S):
            lo, hi = u_bounds(t, s, mode, Uread, rk, rol, L, mu, Ft)
            if lo > hi:
                counts[0] += 1
                x = 0.5 * (lo + hi)
            else:
                x = truncnorm_draw(MU[t, s], lo, hi, rng)
            if not np.isfinite(x):
                counts[2] += 1
            U[t, s] = x
    Fs = school_feasible(Uread, pr, mu)
    for s in range(S):
        for t in range(T):
            lo, hi = v_bounds(s, t, mode, Vread, pr, plist, nacc, ulist, nun, mu,
                              members, load, cap, Fs)
            if lo > hi:
                counts[1] += 1
                x = 0.5 * (lo + hi)
            else:
                x = truncnorm_draw(MV[s, t], lo, hi, rng)
            if not np.isfinite(x):
                counts[2] += 1
            V[s, t] = x


@numba.njit(cache=True)
def audit(U, V, mode, rk, rol, L, pr, plist, nacc, ulist, nun, mu, members, load,
          cap, tol):
    """Count entries lying outside their bounds under the final state."""
    T, S = U.shape
    bad_u = 0
    bad_v = 0
    Ft = student_feasible(V, pr, members, load, cap)
    for t in range(T):
        for s in range(S):
            lo, hi = u_bounds(t, s, mode, U, rk, rol, L, mu, Ft)
            if U[t, s] < lo - tol or U[t, s] > hi + tol:
                bad_u += 1
    Fs = school_feasible(U, pr, mu)
    for s in range(S):
        for t in range(T):
            lo, hi = v_bounds(s, t, mode, V, pr, plist, nacc, ulist, nun, mu,
                              members, load, cap, Fs)
            if V[s, t] < lo - tol or V[s, t] > hi + tol:
                bad_v += 1
    return bad_u, bad_v
