"""Monte Carlo study of the estimator on a synthetic strategic-reporting market.

True model: U_t(s) = delta_s - d_ts + 3 a_t abar_s + eps_ts and
V_s(t) = a_t + eta_st.  Students submit cost-aware portfolios given
bootstrap admission beliefs, the market clears by student-proposing DA and
the estimator is run on what an analyst would see.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .estimator import DesignData, GibbsConfig, run_gibbs
from .market import Market, RankData
from .matching import deferred_acceptance
from .random_market import rng_for

BETA0 = (1.0, -1.0, 3.0)
GAMMA0 = (1.0,)
X_NAMES = ("delta", "distance", "interaction")
W_NAMES = ("grade",)
PARAMETERS = tuple(f"beta.{n}" for n in X_NAMES) + tuple(f"gamma.{n}" for n in W_NAMES)
THETA0 = dict(zip(PARAMETERS, BETA0 + GAMMA0))
N_SCHOOLS = 6
DEFAULT_COST = 0.06
BENCHMARK = "BENCHMARK"
STRATEGIC_MODES = ("WTT", "STABILITY", "UNDOM", "STAB_UNDOM")


@dataclass(frozen=True)
class DgpSettings:
    n_schools: int = N_SCHOOLS
    seat_share: float = 0.95
    delta_range: tuple[float, float] = (0.0, 2.0)
    distance_range: tuple[float, float] = (0.0, 2.0)
    warmup_passes: int = 3


@dataclass(frozen=True, eq=False)
class DgpMarket:
    delta: np.ndarray      # (S,)
    distance: np.ndarray   # (T, S)
    grade: np.ndarray      # (T,)
    abar: np.ndarray       # (S,)
    eps: np.ndarray        # (T, S)
    eta: np.ndarray        # (S, T)
    capacity: np.ndarray   # (S,)

    @property
    def T(self) -> int:
        return len(self.grade)

    @property
    def S(self) -> int:
        return len(self.delta)

    @property
    def X(self) -> np.ndarray:
        """(T, S, 3) covariates in BETA0 order."""
        T, S = self.T, self.S
        return np.stack([np.broadcast_to(self.delta, (T, S)), self.distance,
                         np.outer(self.grade, self.abar)], axis=2)

    @property
    def W(self) -> np.ndarray:
        return np.broadcast_to(self.grade, (self.S, self.T))[:, :, None].copy()

    @property
    def U(self) -> np.ndarray:
        return self.X @ np.array(BETA0) + self.eps

    @property
    def V(self) -> np.ndarray:
        return self.W @ np.array(GAMMA0) + self.eta

    @property
    def students(self) -> tuple[str, ...]:
        return tuple(f"t{i + 1}" for i in range(self.T))

    @property
    def schools(self) -> tuple[str, ...]:
        return tuple(f"s{j + 1}" for j in range(self.S))


def split_capacity(total: int, n: int) -> np.ndarray:
    """Near-equal integer split of ``total`` seats, larger shares first."""
    base, extra = divmod(total, n)
    return np.array([base + (j < extra) for j in range(n)], dtype=np.int64)


def _truthful_match(U: np.ndarray, V: np.ndarray, capacity: np.ndarray) -> np.ndarray:
    prefs = np.argsort(-U, axis=1).tolist()
    prank = np.argsort(np.argsort(-V, axis=1), axis=1)
    return deferred_acceptance(prefs, prank, capacity)


def simulate_dgp_market(T: int = 200, seed: int = 0,
                        settings: DgpSettings = DgpSettings()) -> DgpMarket:
    """One synthetic market; school quality comes from a truthful warm-up match."""
    if T < 20:
        raise ValueError("the DGP needs T >= 20")
    rng = rng_for(seed, 0)
    S = settings.n_schools
    delta = np.linspace(*settings.delta_range, S)
    distance = rng.uniform(*settings.distance_range, size=(T, S))
    grade = rng.standard_normal(T)
    eps = rng.standard_normal((T, S))
    eta = rng.standard_normal((S, T))
    capacity = split_capacity(int(math.floor(settings.seat_share * T)), S)
    # warm-up with independent shocks so abar is not tied to eps
    wrng = rng_for(seed, 1)
    w_eps = wrng.standard_normal((T, S))
    w_eta = wrng.standard_normal((S, T))
    abar = np.zeros(S)
    for _ in range(settings.warmup_passes):
        U = delta[None, :] - distance + 3.0 * np.outer(grade, abar) + w_eps
        mu = _truthful_match(U, grade[None, :] + w_eta, capacity)
        abar = np.array([grade[mu == s].mean() if np.any(mu == s) else 0.0
                         for s in range(S)])
    return DgpMarket(delta, distance, grade, abar, eps, eta, capacity)


def admission_beliefs(dgp: DgpMarket, rng: np.random.Generator,
                      n_boot: int = 50, n_bins: int = 10) -> np.ndarray:
    """(T, S) admission probabilities from bootstrap cohorts, by grade decile."""
    T, S = dgp.T, dgp.S
    edges = np.quantile(dgp.grade, np.linspace(0, 1, n_bins + 1)[1:-1])
    bins = np.searchsorted(edges, dgp.grade)
    hits = np.zeros((n_bins, S))
    tries = np.zeros(n_bins)
    U_true = dgp.U
    for _ in range(n_boot):
        idx = rng.integers(0, T, size=T)
        V = dgp.grade[idx][None, :] + rng.standard_normal((S, T))
        mu = _truthful_match(U_true[idx], V, dgp.capacity)
        cut = np.full(S, -np.inf)
        for s in range(S):
            members = mu == s
            if members.sum() >= dgp.capacity[s]:
                cut[s] = V[s, members].min()
        admit = V >= cut[:, None]  # (S, T)
        b = bins[idx]
        np.add.at(hits, b, admit.T)
        np.add.at(tries, b, 1.0)
    prob = hits / np.maximum(tries, 1.0)[:, None]
    return prob[bins]


def choose_portfolio(u: np.ndarray, p: np.ndarray, cost: float,
                     outside: float) -> list[int]:
    """Greedy cost-aware list: add the school with the largest expected gain.

    Admission events are treated as independent; the list is always kept in
    true utility order, so it never inverts preferences.  Without a cost,
    listing every school is weakly dominant and the full order is returned.
    """
    if cost == 0:
        return [int(j) for j in np.argsort(-u)]
    chosen: list[int] = []

    def value(lst: list[int]) -> float:
        ev, miss = 0.0, 1.0
        for s in lst:
            ev += miss * p[s] * u[s]
            miss *= 1.0 - p[s]
        return ev + miss * outside

    current = value(chosen)
    remaining = set(range(len(u)))
    while remaining:
        best, best_val = -1, current
        for s in remaining:
            lst = sorted(chosen + [s], key=lambda j: -u[j])
            v = value(lst)
            if v > best_val:
                best, best_val = s, v
        if best < 0 or best_val - current <= cost:
            break
        chosen = sorted(chosen + [best], key=lambda j: -u[j])
        remaining.discard(best)
        current = best_val
    return chosen


def strategic_rols(dgp: DgpMarket, cost: float = DEFAULT_COST, seed: int = 0,
                   beliefs: np.ndarray | None = None, n_boot: int = 50,
                   unacceptable_below: float | None = None) -> RankData:
    """Submitted lists and the schools' rankings of their applicants."""
    if cost < 0:
        raise ValueError("cost must be >= 0")
    if beliefs is None:
        beliefs = admission_beliefs(dgp, rng_for(seed, 2), n_boot=n_boot)
    U, V = dgp.U, dgp.V
    students, schools = dgp.students, dgp.schools
    rols = {}
    for i, t in enumerate(students):
        lst = choose_portfolio(U[i], beliefs[i], cost, outside=U[i].min() - 1.0)
        rols[t] = [schools[j] for j in lst]
    return _rank_data(dgp, rols, unacceptable_below)


def _rank_data(dgp: DgpMarket, rols: dict, unacceptable_below: float | None) -> RankData:
    V = dgp.V
    students, schools = dgp.students, dgp.schools
    s_idx = {s: j for j, s in enumerate(schools)}
    applicants: dict[str, list[int]] = {s: [] for s in schools}
    for i, t in enumerate(students):
        for s in rols[t]:
            applicants[s].append(i)
    prios, unacc = {}, {}
    for s, ts in applicants.items():
        j = s_idx[s]
        ranked = sorted(ts, key=lambda i: -V[j, i])
        ok = [i for i in ranked if unacceptable_below is None or V[j, i] >= unacceptable_below]
        prios[s] = [students[i] for i in ok]
        unacc[s] = [students[i] for i in ranked if i not in set(ok)]
    return RankData(students, schools, rols, prios, unacc)


def truthful_rank_data(dgp: DgpMarket) -> RankData:
    """Complete true lists on both sides."""
    U = dgp.U
    rols = {t: [dgp.schools[j] for j in np.argsort(-U[i])]
            for i, t in enumerate(dgp.students)}
    return _rank_data(dgp, rols, None)


def match_submitted(dgp: DgpMarket, ranks: RankData) -> np.ndarray:
    """Observed matching: DA on submitted lists and the schools' rankings."""
    T, S = dgp.T, dgp.S
    prefs = [list(np.argsort(np.where(ranks.rk[i] > 0, ranks.rk[i], S + 1))[: (ranks.rk[i] > 0).sum()])
             for i in range(T)]
    prank = np.where((ranks.pr > 0) & (ranks.pr < np.iinfo(np.int64).max // 8),
                     ranks.pr - 1, -1)
    return deferred_acceptance(prefs, prank, dgp.capacity)


def wtt_share(submitted: RankData, dgp: DgpMarket) -> float:
    """Fraction of students whose list is exactly their true top-K list."""
    U = dgp.U
    ok = 0
    for i in range(dgp.T):
        K = int((submitted.rk[i] > 0).sum())
        listed = np.argsort(np.where(submitted.rk[i] > 0, submitted.rk[i], dgp.S + 1))[:K]
        ok += bool(np.array_equal(listed, np.argsort(-U[i])[:K]))
    return ok / dgp.T


def to_market(dgp: DgpMarket, ranks: RankData) -> Market:
    """Submitted market with the covariates an analyst would hold."""
    students, schools = dgp.students, dgp.schools
    rols = {t: tuple(schools[j] for j in np.argsort(np.where(ranks.rk[i] > 0, ranks.rk[i],
                                                            dgp.S + 1))[: (ranks.rk[i] > 0).sum()])
            for i, t in enumerate(students)}
    prios, unacc = {}, {}
    for j, s in enumerate(schools):
        row = ranks.pr[j]
        ok = np.flatnonzero((row > 0) & (row < np.iinfo(np.int64).max // 8))
        prios[s] = tuple(students[i] for i in ok[np.argsort(row[ok])])
        unacc[s] = frozenset(students[i] for i in np.flatnonzero(row >= np.iinfo(np.int64).max // 8))
    X = dgp.X
    return Market(
        students=students, schools=schools,
        capacity=dict(zip(schools, dgp.capacity.tolist())),
        district_of={x: "D1" for x in students + schools},
        student_prefs=rols, school_priorities=prios, unacceptable=unacc,
        student_covariates={t: {"grade": float(dgp.grade[i])} for i, t in enumerate(students)},
        school_covariates={s: {"delta": float(dgp.delta[j]), "quality": float(dgp.abar[j])}
                           for j, s in enumerate(schools)},
        pair_covariates={(t, s): {"distance": float(X[i, j, 1]),
                                  "interaction": float(X[i, j, 2])}
                         for i, t in enumerate(students) for j, s in enumerate(schools)},
    )


def design_for(dgp: DgpMarket, ranks: RankData, mu: np.ndarray) -> DesignData:
    return DesignData(dgp.students, dgp.schools, dgp.X, dgp.W, ranks, mu,
                      dgp.capacity, X_NAMES, W_NAMES)


@dataclass
class McScore:
    modes: tuple[str, ...]
    estimates: dict[str, np.ndarray]   # mode -> (reps, n_params)
    wtt: np.ndarray                    # (reps,)
    diagnostics: dict[str, list] = field(default_factory=dict)

    def errors(self, mode: str) -> np.ndarray:
        return self.estimates[mode] - np.array([THETA0[p] for p in PARAMETERS])

    def mse(self, mode: str) -> np.ndarray:
        return np.mean(self.errors(mode) ** 2, axis=0)

    def bias(self, mode: str) -> np.ndarray:
        return np.mean(self.errors(mode), axis=0)

    def table(self) -> list[dict]:
        rows = []
        for m in self.modes:
            mse, bias = self.mse(m), self.bias(m)
            for k, p in enumerate(PARAMETERS):
                rows.append({"mode": m, "parameter": p, "mse": float(mse[k]),
                             "bias": float(bias[k])})
        return rows

    def wtt_regressions(self) -> list[dict]:
        """Slope of estimation error on WTT share, per mode and parameter."""
        rows = []
        for m in self.modes:
            err = self.errors(m)
            for k, p in enumerate(PARAMETERS):
                if np.ptp(self.wtt) == 0 or len(self.wtt) < 3:
                    slope, pval = float("nan"), float("nan")
                else:
                    fit = stats.linregress(self.wtt, err[:, k])
                    slope, pval = float(fit.slope), float(fit.pvalue)
                rows.append({"mode": m, "parameter": p, "slope": slope, "p_value": pval})
        return rows


def mc_replication(T: int, rep: int, modes: Sequence[str], config: GibbsConfig,
                   seed: int, cost: float = DEFAULT_COST, n_boot: int = 50):
    """Estimates per mode and the WTT share for one replication."""
    dgp = simulate_dgp_market(T, seed=int(np.random.SeedSequence(seed, spawn_key=(rep,))
                                          .generate_state(1)[0]))
    ranks = strategic_rols(dgp, cost, seed=rep + 7919 * seed, n_boot=n_boot)
    mu = match_submitted(dgp, ranks)
    share = wtt_share(ranks, dgp)
    out, diag = {}, {}
    for k, mode in enumerate(modes):
        cfg_seed = int(np.random.SeedSequence(seed, spawn_key=(rep, k + 1)).generate_state(1)[0])
        if mode == BENCHMARK:
            true = truthful_rank_data(dgp)
            data = design_for(dgp, true, _truthful_match(dgp.U, dgp.V, dgp.capacity))
            cfg = _with(config, mode="UNDOM", seed=cfg_seed)
        else:
            data = design_for(dgp, ranks, mu)
            cfg = _with(config, mode=mode, seed=cfg_seed)
        draws = run_gibbs(data, cfg)
        est = draws.estimates()
        out[mode] = np.array([est[p] for p in PARAMETERS])
        diag[mode] = {k2: draws.diagnostics[k2] for k2 in
                      ("clamped_U", "clamped_V", "final_bound_violations",
                       "stability_blocking_pairs")}
    return out, share, diag


def _with(config: GibbsConfig, **kw) -> GibbsConfig:
    return replace(config, **kw)


def mc_study(T: int = 200, reps: int = 20,
             modes: Sequence[str] = (BENCHMARK,) + STRATEGIC_MODES,
             config: GibbsConfig | None = None, seed: int = 0,
             cost: float = DEFAULT_COST, n_boot: int = 50,
             workers: int = 1, identical_reps: bool = False) -> McScore:
    """Run ``reps`` replications and score each mode.

    With ``identical_reps`` every replication reuses the first one's seed,
    which gives a degenerate fleet (useful for checking the scoring).
    """
    if reps < 2:
        raise ValueError("mc_study needs reps >= 2")
    config = config or GibbsConfig()
    modes = tuple(modes)
    rep_ids = [0] * reps if identical_reps else list(range(reps))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(mc_replication, [T] * reps, rep_ids, [modes] * reps,
                                  [config] * reps, [seed] * reps, [cost] * reps,
                                  [n_boot] * reps))
    else:
        results = [mc_replication(T, r, modes, config, seed, cost, n_boot) for r in rep_ids]
    est = {m: np.stack([res[0][m] for res in results]) for m in modes}
    wtt = np.array([res[1] for res in results])
    diag = {m: [res[2][m] for res in results] for m in modes}
    return McScore(modes, est, wtt, diag)
