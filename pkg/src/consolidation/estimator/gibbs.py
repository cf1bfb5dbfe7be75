"""Gibbs data augmentation for latent student utilities and school valuations.

Model: U_t(s) = X_ts beta + eps_ts and V_s(t) = W_st gamma + eta_st with
standard normal errors.  Each iteration redraws every latent value from a
unit-variance normal truncated to the interval implied by the identifying
assumption (``mode``), then draws beta and gamma from their conjugate normal
posteriors under a flat prior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from ..market import PR_UNACCEPTABLE, Market, Matching, RankData
from . import _kernel as K
from .truncnorm import ndtri

log = logging.getLogger(__name__)

MODES = {"WTT": K.WTT, "UNDOM": K.UNDOM, "STABILITY": K.STABILITY,
         "STAB_UNDOM": K.STAB_UNDOM}
Mode = Literal["WTT", "UNDOM", "STABILITY", "STAB_UNDOM"]


class EstimationError(RuntimeError):
    """Raised when a chain produces non-finite values."""


def prune_collinear(X: np.ndarray, droppable: Sequence[int] | None = None,
                    rtol: float | None = None) -> tuple[list[int], list[int]]:
    """Drop trailing columns until ``X`` has full column rank.

    Rank is read off a column-pivoted QR with tolerance
    ``max(n, p) * eps * |R[0, 0]|`` (or ``rtol * |R[0, 0]|``).  While the
    matrix is deficient, the last droppable column that enters a null vector
    is removed.  Returns (kept, dropped) column indices.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    n, p = X.shape
    allowed = set(range(p) if droppable is None else droppable)
    kept = list(range(p))
    dropped: list[int] = []
    while kept:
        A = X[:, kept]
        _, R, _ = sla.qr(A, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag[0] == 0.0:
            dropped.extend(kept)
            kept = []
            break
        tol = (rtol if rtol is not None else max(n, p) * np.finfo(float).eps) * diag[0]
        rank = int(np.sum(diag > tol))
        if rank == len(kept):
            break
        # null space direction of A: smallest right singular vector
        _, sv, vt = np.linalg.svd(A, full_matrices=False)
        null = vt[-1]
        weight = np.abs(null) > 1e-8 * np.abs(null).max()
        cand = [k for pos, k in enumerate(kept) if weight[pos] and k in allowed]
        if not cand:
            break
        victim = cand[-1]
        kept.remove(victim)
        dropped.append(victim)
    return kept, sorted(dropped)


@dataclass(frozen=True, eq=False)
class DesignData:
    """Everything the sampler conditions on.

    ``X`` is (T, S, p) with ``X[t, s]`` the covariates of U_t(s); ``W`` is
    (S, T, r) with ``W[s, t]`` those of V_s(t).  ``mu`` holds the observed
    school index per student (-1 unmatched).
    """

    students: tuple[str, ...]
    schools: tuple[str, ...]
    X: np.ndarray
    W: np.ndarray
    ranks: RankData
    mu: np.ndarray
    capacity: np.ndarray
    x_names: tuple[str, ...] = ()
    w_names: tuple[str, ...] = ()
    district_of: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "students", tuple(self.students))
        set_(self, "schools", tuple(self.schools))
        set_(self, "X", np.asarray(self.X, dtype=np.float64))
        set_(self, "W", np.asarray(self.W, dtype=np.float64))
        set_(self, "mu", np.asarray(self.mu, dtype=np.int64))
        set_(self, "capacity", np.asarray(self.capacity, dtype=np.int64))
        T, S = len(self.students), len(self.schools)
        if self.X.ndim != 3 or self.X.shape[:2] != (T, S):
            raise ValueError(f"X must have shape ({T}, {S}, p), got {self.X.shape}")
        if self.W.ndim != 3 or self.W.shape[:2] != (S, T):
            raise ValueError(f"W must have shape ({S}, {T}, r), got {self.W.shape}")
        if self.ranks.rk.shape != (T, S) or self.ranks.pr.shape != (S, T):
            raise ValueError("rank data does not match the student/school universe")
        if self.mu.shape != (T,) or self.capacity.shape != (S,):
            raise ValueError("matching or capacity has the wrong length")
        if np.any(self.mu >= S) or np.any(self.mu < -1):
            raise ValueError("matching references unknown schools")
        if not self.x_names:
            set_(self, "x_names", tuple(f"x{i}" for i in range(self.X.shape[2])))
        if not self.w_names:
            set_(self, "w_names", tuple(f"w{i}" for i in range(self.W.shape[2])))
        problems = self.ranks.check()
        if problems:
            raise ValueError("inconsistent rank data: " + "; ".join(problems[:5]))
        if np.any(self.load > self.capacity):
            raise ValueError("observed matching exceeds a capacity")

    @classmethod
    def from_market(cls, market: Market, matching: Matching, X, W,
                    x_names=(), w_names=()) -> "DesignData":
        return cls(market.students, market.schools, X, W, RankData.from_market(market),
                   matching.to_array(market), market.capacity_array, tuple(x_names),
                   tuple(w_names), dict(market.district_of))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.students), len(self.schools)

    @cached_property
    def load(self) -> np.ndarray:
        return np.bincount(self.mu[self.mu >= 0], minlength=len(self.schools))

    @property
    def full(self) -> np.ndarray:
        """Capacity-full indicator per school."""
        return self.load == self.capacity

    @cached_property
    def arrays(self) -> dict:
        """Padded index arrays consumed by the compiled kernel."""
        T, S = self.shape
        rk, pr = self.ranks.rk, self.ranks.pr
        L = (rk > 0).sum(axis=1).astype(np.int64)
        rol = np.full((T, S), -1, dtype=np.int64)
        for t in range(T):
            js = np.flatnonzero(rk[t])
            rol[t, rk[t, js] - 1] = js
        acc = (pr > 0) & (pr != PR_UNACCEPTABLE)
        nacc = acc.sum(axis=1).astype(np.int64)
        unacc = pr == PR_UNACCEPTABLE
        nun = unacc.sum(axis=1).astype(np.int64)
        plist = np.full((S, max(T, 1)), -1, dtype=np.int64)
        ulist = np.full((S, max(T, 1)), -1, dtype=np.int64)
        for s in range(S):
            ts = np.flatnonzero(acc[s])
            plist[s, pr[s, ts] - 1] = ts
            us = np.flatnonzero(unacc[s])
            ulist[s, : len(us)] = us
        qmax = max(int(self.capacity.max(initial=1)), 1)
        members = np.full((S, qmax), -1, dtype=np.int64)
        for s in range(S):
            ts = np.flatnonzero(self.mu == s)
            members[s, : len(ts)] = ts
        return dict(rk=np.ascontiguousarray(rk), rol=rol, L=L,
                    pr=np.ascontiguousarray(pr), plist=plist, nacc=nacc,
                    ulist=ulist, nun=nun, mu=self.mu, members=members,
                    load=self.load.astype(np.int64), cap=self.capacity)

    @cached_property
    def X2(self) -> np.ndarray:
        """X flattened to rows t * S + s."""
        return self.X.reshape(-1, self.X.shape[2])

    @cached_property
    def W2(self) -> np.ndarray:
        """W flattened to rows s * T + t."""
        return self.W.reshape(-1, self.W.shape[2])


@dataclass(frozen=True)
class GibbsConfig:
    mode: Mode = "STAB_UNDOM"
    iterations: int = 5000
    burn_in: int = 2500
    thinning: int = 1
    seed: int = 0
    ridge: float | None = None  # None: 1e-8 * trace(G) / p
    init: Literal["consistent", "zero"] = "consistent"
    update: Literal["gauss-seidel", "last-iteration"] = "gauss-seidel"
    trace_window: int = 100
    fixed_beta: tuple[float, ...] | None = None
    fixed_gamma: tuple[float, ...] | None = None
    prune: bool = True
    scale_moves: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.update not in ("gauss-seidel", "last-iteration"):
            raise ValueError(f"unknown update scheme {self.update!r}")
        if self.init not in ("consistent", "zero"):
            raise ValueError(f"unknown init policy {self.init!r}")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class LatentState:
    U: np.ndarray      # (T, S)
    V: np.ndarray      # (S, T)
    beta: np.ndarray
    gamma: np.ndarray
    iteration: int = 0

    def copy(self) -> "LatentState":
        return LatentState(self.U.copy(), self.V.copy(), self.beta.copy(),
                           self.gamma.copy(), self.iteration)


@dataclass
class PosteriorDraws:
    beta: np.ndarray         # (n_retained, p)
    gamma: np.ndarray        # (n_retained, r)
    x_names: tuple[str, ...]
    w_names: tuple[str, ...]
    state: LatentState
    diagnostics: dict
    config: GibbsConfig

    @property
    def beta_mean(self) -> np.ndarray:
        return self.beta.mean(axis=0)

    @property
    def gamma_mean(self) -> np.ndarray:
        return self.gamma.mean(axis=0)

    def estimates(self) -> dict[str, float]:
        out = {f"beta.{n}": float(v) for n, v in zip(self.x_names, self.beta_mean)}
        out.update({f"gamma.{n}": float(v) for n, v in zip(self.w_names, self.gamma_mean)})
        return out

    def summary(self) -> list[dict]:
        """Posterior mean and 95% interval per coefficient."""
        rows = []
        for side, names, draws in (("beta", self.x_names, self.beta),
                                   ("gamma", self.w_names, self.gamma)):
            for k, n in enumerate(names):
                d = draws[:, k]
                rows.append({"parameter": f"{side}.{n}", "mean": float(d.mean()),
                             "q2.5": float(np.quantile(d, 0.025)),
                             "q97.5": float(np.quantile(d, 0.975))})
        return rows


class _Regression:
    """Conjugate normal draw for coefficients of a unit-variance regression."""

    def __init__(self, X: np.ndarray, ridge: float | None):
        p = X.shape[1]
        G = X.T @ X
        eps = 1e-8 * np.trace(G) / p if ridge is None else ridge
        if eps == 0.0 and np.trace(G) == 0.0:
            eps = 1.0
        self.ridge = float(eps)
        self.X = X
        self.chol = sla.cho_factor(G + eps * np.eye(p), lower=True)
        self.L = self.chol[0]

    def rescale(self, y: np.ndarray, rng: np.random.Generator) -> float:
        """Scale factor g for the move y -> g * y with coefficients integrated out.

        Every truncation constraint compares latents of one agent, so the
        admissible set is a cone and the move keeps the target invariant:
        g^2 ~ chi2_n / RSS(y) (Liu and Wu, 1999).
        """
        Xty = self.X.T @ y
        rss = float(y @ y - Xty @ sla.cho_solve(self.chol, Xty))
        if not rss > 0.0:
            return 1.0
        return float(np.sqrt(rng.chisquare(len(y)) / rss))

    def draw(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        b = sla.cho_solve(self.chol, self.X.T @ y)
        z = rng.standard_normal(len(b))
        # L^{-T} z has covariance (L L^T)^{-1}
        return b + sla.solve_triangular(self.L, z, lower=True, trans="T")


def _consistent_values(order: np.ndarray) -> np.ndarray:
    """Distinct decreasing normal scores along each row's given order."""
    n_rows, n = order.shape
    scores = -np.array([ndtri((k + 0.5) / n) for k in range(n)])
    out = np.empty((n_rows, n))
    np.put_along_axis(out, order, np.broadcast_to(scores, (n_rows, n)), axis=1)
    return out


def initial_state(data: DesignData, config: GibbsConfig) -> LatentState:
    """Starting latents that respect every identifying restriction.

    Students rank listed schools first, in listed order, then unlisted ones;
    schools rank acceptable applicants by priority, then non-applicants,
    then unacceptable applicants.  Under DA these orders keep the observed
    matching stable, so the first sweep starts inside all bounds.
    """
    T, S = data.shape
    p, r = data.X.shape[2], data.W.shape[2]
    beta = np.zeros(p) if config.fixed_beta is None else np.asarray(config.fixed_beta, float)
    gamma = np.zeros(r) if config.fixed_gamma is None else np.asarray(config.fixed_gamma, float)
    if config.init == "zero":
        return LatentState(np.zeros((T, S)), np.zeros((S, T)), beta, gamma)
    rk, pr = data.ranks.rk, data.ranks.pr
    key_u = np.where(rk > 0, rk, S + 1 + np.arange(S)[None, :])
    order_u = np.argsort(key_u, axis=1, kind="stable")
    unacc = pr == PR_UNACCEPTABLE
    key_v = np.where((pr > 0) & ~unacc, pr, 0).astype(np.float64)
    key_v[pr == 0] = T + 1 + np.broadcast_to(np.arange(T), (S, T))[pr == 0]
    key_v[unacc] = 3 * T + 2 + np.broadcast_to(np.arange(T), (S, T))[unacc]
    order_v = np.argsort(key_v, axis=1, kind="stable")
    return LatentState(_consistent_values(order_u), _consistent_values(order_v), beta, gamma)


class _Chain:
    def __init__(self, data: DesignData, config: GibbsConfig):
        self.data = data
        self.config = config
        self.mode = MODES[config.mode]
        self.a = data.arrays
        self.x_kept = list(range(data.X.shape[2]))
        self.w_kept = list(range(data.W.shape[2]))
        self.x_dropped: list[int] = []
        self.w_dropped: list[int] = []
        if config.prune:
            self.x_kept, self.x_dropped = prune_collinear(data.X2)
            self.w_kept, self.w_dropped = prune_collinear(data.W2)
        self.reg_x = _Regression(data.X2[:, self.x_kept], config.ridge) if self.x_kept else None
        self.reg_w = _Regression(data.W2[:, self.w_kept], config.ridge) if self.w_kept else None
        self.counts = np.zeros(3, dtype=np.int64)

    def means(self, state: LatentState):
        T, S = self.data.shape
        MU = (self.data.X2 @ state.beta).reshape(T, S)
        MV = (self.data.W2 @ state.gamma).reshape(S, T)
        return MU, MV

    def step(self, state: LatentState, rng: np.random.Generator) -> LatentState:
        cfg, a = self.config, self.a
        MU, MV = self.means(state)
        if cfg.update == "gauss-seidel":
            Ur, Vr = state.U, state.V
        else:
            Ur, Vr = state.U.copy(), state.V.copy()
        before = self.counts.copy()
        K.sweep(state.U, state.V, MU, MV, Ur, Vr, self.mode, a["rk"], a["rol"], a["L"],
                a["pr"], a["plist"], a["nacc"], a["ulist"], a["nun"], a["mu"],
                a["members"], a["load"], a["cap"], rng, self.counts)
        if self.counts[2] > before[2]:
            raise EstimationError(
                f"non-finite latent draw at iteration {state.iteration + 1}; "
                f"clamp counts U={self.counts[0]} V={self.counts[1]}")
        if cfg.fixed_beta is None and self.reg_x is not None:
            if cfg.scale_moves:
                state.U *= self.reg_x.rescale(state.U.reshape(-1), rng)
            beta = np.zeros(self.data.X.shape[2])
            beta[self.x_kept] = self.reg_x.draw(state.U.reshape(-1), rng)
            state.beta = beta
        if cfg.fixed_gamma is None and self.reg_w is not None:
            if cfg.scale_moves:
                state.V *= self.reg_w.rescale(state.V.reshape(-1), rng)
            gamma = np.zeros(self.data.W.shape[2])
            gamma[self.w_kept] = self.reg_w.draw(state.V.reshape(-1), rng)
            state.gamma = gamma
        if not (np.all(np.isfinite(state.beta)) and np.all(np.isfinite(state.gamma))):
            raise EstimationError(f"non-finite coefficient draw at iteration {state.iteration + 1}")
        state.iteration += 1
        return state


def gibbs_iteration(state: LatentState, data: DesignData, config: GibbsConfig,
                    rng: np.random.Generator) -> LatentState:
    """One full sweep: all U, then all V, then beta and gamma (in place)."""
    return _Chain(data, config).step(state, rng)


def _audit_counts(state: LatentState, data: DesignData, mode: int) -> tuple[int, int]:
    a = data.arrays
    return K.audit(state.U, state.V, mode, a["rk"], a["rol"], a["L"], a["pr"], a["plist"],
                   a["nacc"], a["ulist"], a["nun"], a["mu"], a["members"], a["load"],
                   a["cap"], 1e-12)


def bound_violations(state: LatentState, data: DesignData, mode: Mode) -> tuple[int, int]:
    """Number of U and V entries outside their bounds under ``state``."""
    return _audit_counts(state, data, MODES[mode])


def run_gibbs(data: DesignData, config: GibbsConfig,
              rng: np.random.Generator | None = None) -> PosteriorDraws:
    """Run one chain and keep draws after burn-in at the given thinning."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    chain = _Chain(data, config)
    state = initial_state(data, config)
    p, r = data.X.shape[2], data.W.shape[2]
    n_keep = config.n_retained
    betas = np.empty((n_keep, p))
    gammas = np.empty((n_keep, r))
    trace_b = np.empty((config.iterations, p))
    trace_g = np.empty((config.iterations, r))
    k = 0
    for it in range(1, config.iterations + 1):
        chain.step(state, rng)
        trace_b[it - 1] = state.beta
        trace_g[it - 1] = state.gamma
        if it > config.burn_in and (it - config.burn_in) % config.thinning == 0:
            betas[k] = state.beta
            gammas[k] = state.gamma
            k += 1
    bad_u, bad_v = _audit_counts(state, data, chain.mode)
    audit_fail = int(bad_u + bad_v)
    w = max(config.trace_window, 1)
    n_win = config.iterations // w
    diagnostics = {
        "mode": config.mode,
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thinning": config.thinning,
        "retained": n_keep,
        "clamped_U": int(chain.counts[0]),
        "clamped_V": int(chain.counts[1]),
        "final_bound_violations": audit_fail,
        "ridge_x": chain.reg_x.ridge if chain.reg_x else None,
        "ridge_w": chain.reg_w.ridge if chain.reg_w else None,
        "dropped_x": [data.x_names[i] for i in chain.x_dropped],
        "dropped_w": [data.w_names[i] for i in chain.w_dropped],
        "trace_beta": trace_b[: n_win * w].reshape(n_win, w, p).mean(axis=1).tolist(),
        "trace_gamma": trace_g[: n_win * w].reshape(n_win, w, r).mean(axis=1).tolist(),
        "stability_blocking_pairs": len(stability_audit(state, data)),
    }
    if chain.counts[:2].sum():
        log.info("chain clamped %d U and %d V intervals", chain.counts[0], chain.counts[1])
    return PosteriorDraws(betas, gammas, data.x_names, data.w_names, state,
                          diagnostics, config)


def stability_audit(state: LatentState, data: DesignData) -> list[tuple[int, int]]:
    """Blocking pairs of the observed matching under (U, V), carve-out excluded.

    A pair (t, s) blocks when s does not reject t, t prefers s to its
    assignment (or is unmatched) and s either has a vacancy or values t above
    a member.  Unmatched students facing a vacant school they never applied
    to are exempt.
    """
    U, V = state.U, state.V
    a = data.arrays
    pr, mu = a["pr"], a["mu"]
    load, cap = a["load"], a["cap"]
    T, S = data.shape
    out = []
    for s in range(S):
        members = np.flatnonzero(mu == s)
        full = load[s] >= cap[s]
        cut = V[s, members].min() if full and len(members) else -np.inf
        for t in range(T):
            if mu[t] == s or pr[s, t] == PR_UNACCEPTABLE:
                continue
            wants = mu[t] < 0 or U[t, s] > U[t, mu[t]]
            if not wants:
                continue
            if full and V[s, t] <= cut:
                continue
            if not full and mu[t] < 0 and pr[s, t] == 0:
                continue
            out.append((t, s))
    return out


def realize_complete_orders(draws: PosteriorDraws, data: DesignData,
                            use_posterior_mean: bool = False,
                            district_of: Mapping[str, str] | None = None) -> Market:
    """Complete market built from the retained latent realization.

    By default the retained (U, V) are used as they are.  With
    ``use_posterior_mean`` the systematic part is recomputed from the
    posterior mean coefficients while keeping the retained residuals.
    Every student is ranked by every school; ties are broken by index.
    """
    U, V = realized_latents(draws, data, use_posterior_mean)
    T, S = data.shape
    if np.any(np.diff(np.sort(U, axis=1), axis=1) == 0) or np.any(
            np.diff(np.sort(V, axis=1), axis=1) == 0):
        log.warning("ties in realized latents; broken by index order")
    order_u = np.argsort(-U, axis=1, kind="stable")
    order_v = np.argsort(-V, axis=1, kind="stable")
    labels = dict(district_of if district_of is not None else data.district_of)
    for x in data.students + data.schools:
        labels.setdefault(x, "ALL")
    return Market(
        students=data.students,
        schools=data.schools,
        capacity=dict(zip(data.schools, data.capacity.tolist())),
        district_of=labels,
        student_prefs={t: tuple(data.schools[j] for j in order_u[i])
                       for i, t in enumerate(data.students)},
        school_priorities={s: tuple(data.students[i] for i in order_v[j])
                           for j, s in enumerate(data.schools)},
        complete=True,
    )


def realized_latents(draws: PosteriorDraws, data: DesignData,
                     use_posterior_mean: bool = False) -> tuple[np.ndarray, np.ndarray]:
    st = draws.state
    if not use_posterior_mean:
        return st.U.copy(), st.V.copy()
    T, S = data.shape
    shift_u = (data.X2 @ (draws.beta_mean - st.beta)).reshape(T, S)
    shift_v = (data.W2 @ (draws.gamma_mean - st.gamma)).reshape(S, T)
    return st.U + shift_u, st.V + shift_v


def utility_bounds(t: int, s: int, mode: Mode, state: LatentState,
                   data: DesignData) -> tuple[float, float]:
    """Interval for U[t, s] given every other current latent value."""
    a = data.arrays
    Ft = K.student_feasible(state.V, a["pr"], a["members"], a["load"], a["cap"])
    return K.u_bounds(t, s, MODES[mode], state.U, a["rk"], a["rol"], a["L"], a["mu"], Ft)


def valuation_bounds(s: int, t: int, mode: Mode, state: LatentState,
                     data: DesignData) -> tuple[float, float]:
    """Interval for V[s, t] given every other current latent value."""
    a = data.arrays
    Fs = K.school_feasible(state.U, a["pr"], a["mu"])
    return K.v_bounds(s, t, MODES[mode], state.V, a["pr"], a["plist"], a["nacc"],
                      a["ulist"], a["nun"], a["mu"], a["members"], a["load"], a["cap"], Fs)
