"""CSV and JSON artifacts for markets, matchings, latents and reports.

Market directories hold ``students.csv`` (id, district, covariates...),
``schools.csv`` (id, district, capacity, covariates...), ``rols.csv``
(student_id, rank, school_id), ``priorities.csv`` (school_id, priority,
student_id, acceptable) and optionally ``pairs.csv`` (student_id, school_id,
covariates...).  Unacceptable applicants have an empty priority and
acceptable = 0.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .market import Market, MarketError, Matching

UNMATCHED = "UNMATCHED"


class ArtifactError(OSError):
    """Missing or malformed artifact file."""


def fmt(value) -> str:
    """Deterministic text for a CSV cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "NA"
        return repr(v)
    return str(value)


def write_csv(path: Path, rows: Iterable[Mapping], fieldnames: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([fmt(row.get(k)) for k in fieldnames])
    return path


def read_csv(path: Path, required: Sequence[str] = ()) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing file {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise MarketError(f"{path.name}: missing column(s) {', '.join(missing)}")
        return list(reader)


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return None if math.isnan(o) else float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def clean_json(obj):
    """Replace NaN floats with None so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise MarketError(f"{where}: {text!r} is not a number") from None


def _int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise MarketError(f"{where}: {text!r} is not an integer") from None


# -- markets ----------------------------------------------------------------

def write_market(market: Market, directory: Path) -> list[Path]:
    d = Path(directory)
    s_cov = sorted({k for v in market.student_covariates.values() for k in v})
    c_cov = sorted({k for v in market.school_covariates.values() for k in v})
    p_cov = sorted({k for v in market.pair_covariates.values() for k in v})
    out = [
        write_csv(d / "students.csv",
                  ({"id": t, "district": market.district_of.get(t, ""),
                    **market.student_covariates.get(t, {})} for t in market.students),
                  ["id", "district", *s_cov]),
        write_csv(d / "schools.csv",
                  ({"id": s, "district": market.district_of.get(s, ""),
                    "capacity": market.capacity[s], **market.school_covariates.get(s, {})}
                   for s in market.schools),
                  ["id", "district", "capacity", *c_cov]),
        write_csv(d / "rols.csv",
                  ({"student_id": t, "rank": r, "school_id": s}
                   for t in market.students
                   for r, s in enumerate(market.student_prefs[t], start=1)),
                  ["student_id", "rank", "school_id"]),
    ]
    prio_rows = []
    for s in market.schools:
        for r, t in enumerate(market.school_priorities[s], start=1):
            prio_rows.append({"school_id": s, "priority": r, "student_id": t, "acceptable": 1})
        for t in sorted(market.unacceptable.get(s, ()), key=market.student_index.get):
            prio_rows.append({"school_id": s, "priority": None, "student_id": t,
                              "acceptable": 0})
    out.append(write_csv(d / "priorities.csv", prio_rows,
                         ["school_id", "priority", "student_id", "acceptable"]))
    if p_cov:
        rows = ({"student_id": t, "school_id": s, **market.pair_covariates.get((t, s), {})}
                for t in market.students for s in market.schools
                if (t, s) in market.pair_covariates)
        out.append(write_csv(d / "pairs.csv", rows, ["student_id", "school_id", *p_cov]))
    return out


def read_market(directory: Path) -> Market:
    d = Path(directory)
    st_rows = read_csv(d / "students.csv", ["id", "district"])
    sc_rows = read_csv(d / "schools.csv", ["id", "district", "capacity"])
    students = [r["id"] for r in st_rows]
    schools = [r["id"] for r in sc_rows]
    district_of = {r["id"]: r["district"] for r in st_rows + sc_rows if r["district"]}
    capacity = {r["id"]: _int(r["capacity"], f"schools.csv line {i + 2}")
                for i, r in enumerate(sc_rows)}
    s_cov = {r["id"]: {k: _float(v, f"students.csv line {i + 2}") for k, v in r.items()
                       if k not in ("id", "district") and v != ""}
             for i, r in enumerate(st_rows)}
    c_cov = {r["id"]: {k: _float(v, f"schools.csv line {i + 2}") for k, v in r.items()
                       if k not in ("id", "district", "capacity") and v != ""}
             for i, r in enumerate(sc_rows)}

    prefs: dict[str, list[tuple[int, str]]] = {t: [] for t in students}
    for i, r in enumerate(read_csv(d / "rols.csv", ["student_id", "rank", "school_id"])):
        where = f"rols.csv line {i + 2}"
        if r["student_id"] not in prefs:
            raise MarketError(f"{where}: unknown student {r['student_id']!r}")
        prefs[r["student_id"]].append((_int(r["rank"], where), r["school_id"]))
    student_prefs = {t: tuple(s for _, s in sorted(v)) for t, v in prefs.items()}

    prios: dict[str, list[tuple[int, str]]] = {s: [] for s in schools}
    unacc: dict[str, set] = {s: set() for s in schools}
    rows = read_csv(d / "priorities.csv", ["school_id", "priority", "student_id", "acceptable"])
    for i, r in enumerate(rows):
        where = f"priorities.csv line {i + 2}"
        s = r["school_id"]
        if s not in prios:
            raise MarketError(f"{where}: unknown school {s!r}")
        ok = r["acceptable"].strip() not in ("0", "false", "False")
        has_rank = r["priority"].strip() != ""
        if ok != has_rank:
            raise MarketError(f"{where}: acceptable=0 must go with an empty priority")
        if ok:
            prios[s].append((_int(r["priority"], where), r["student_id"]))
        else:
            unacc[s].add(r["student_id"])
    school_priorities = {s: tuple(t for _, t in sorted(v)) for s, v in prios.items()}

    pair_cov: dict[tuple[str, str], dict[str, float]] = {}
    if (d / "pairs.csv").is_file():
        for i, r in enumerate(read_csv(d / "pairs.csv", ["student_id", "school_id"])):
            pair_cov[(r["student_id"], r["school_id"])] = {
                k: _float(v, f"pairs.csv line {i + 2}") for k, v in r.items()
                if k not in ("student_id", "school_id") and v != ""}

    n_s, n_t = len(schools), len(students)
    complete = all(len(v) == n_s for v in student_prefs.values()) and all(
        len(v) == n_t for v in school_priorities.values())
    return Market(students, schools, capacity, district_of, student_prefs,
                  school_priorities, {s: frozenset(v) for s, v in unacc.items() if v},
                  complete, s_cov, c_cov, pair_cov)


def read_partition(path: Path) -> dict[str, str]:
    """``id,district`` rows overriding district labels."""
    return {r["id"]: r["district"] for r in read_csv(path, ["id", "district"])}


# -- matchings --------------------------------------------------------------

def matching_rows(market: Market, matching: Matching, layer: str | None = None,
                  students: Sequence[str] | None = None):
    for t in market.students if students is None else students:
        s = matching.school_of(t)
        row = {"student_id": t, "school_id": s if s is not None else UNMATCHED}
        if layer is not None:
            row["layer"] = layer
        yield row


def write_matching(path: Path, market: Market, matching: Matching) -> Path:
    return write_csv(path, matching_rows(market, matching), ["student_id", "school_id"])


def write_scheme(path: Path, market: Market, scheme) -> Path:
    rows = []
    for d, m in scheme.per_district.items():
        sub = [t for t in market.students if market.district_of[t] == d]
        rows.extend(matching_rows(market, m, f"district:{d}", sub))
    rows.extend(matching_rows(market, scheme.consolidated, "consolidated"))
    return write_csv(path, rows, ["layer", "student_id", "school_id"])


def read_matching(path: Path, market: Market | None = None) -> Matching:
    rows = read_csv(path, ["student_id", "school_id"])
    assignment = {}
    for r in rows:
        if r.get("layer", "consolidated") not in ("consolidated", None):
            continue
        s = r["school_id"]
        assignment[r["student_id"]] = None if s in ("", UNMATCHED) else s
    if market is not None:
        for t in market.students:
            assignment.setdefault(t, None)
    return Matching(assignment)


# -- latents ----------------------------------------------------------------

def write_latents(directory: Path, students: Sequence[str], schools: Sequence[str],
                  U: np.ndarray, V: np.ndarray, acceptable: np.ndarray | None = None
                  ) -> list[Path]:
    d = Path(directory)
    u_rows = ({"student_id": t, "school_id": s, "utility": U[i, j]}
              for i, t in enumerate(students) for j, s in enumerate(schools))
    v_rows = ({"school_id": s, "student_id": t, "valuation": V[j, i],
               "acceptable": True if acceptable is None else bool(acceptable[j, i])}
              for j, s in enumerate(schools) for i, t in enumerate(students))
    return [write_csv(d / "latent_U.csv", u_rows, ["student_id", "school_id", "utility"]),
            write_csv(d / "latent_V.csv", v_rows,
                      ["school_id", "student_id", "valuation", "acceptable"])]


def read_latents(directory: Path, students: Sequence[str], schools: Sequence[str]):
    """(U, V, acceptable) arrays aligned to the given id orders."""
    d = Path(directory)
    t_idx = {t: i for i, t in enumerate(students)}
    s_idx = {s: j for j, s in enumerate(schools)}
    T, S = len(students), len(schools)
    U = np.full((T, S), np.nan)
    V = np.full((S, T), np.nan)
    acc = np.ones((S, T), dtype=bool)
    for k, r in enumerate(read_csv(d / "latent_U.csv", ["student_id", "school_id", "utility"])):
        try:
            U[t_idx[r["student_id"]], s_idx[r["school_id"]]] = float(r["utility"])
        except (KeyError, ValueError):
            raise MarketError(f"latent_U.csv line {k + 2}: bad entry {r}") from None
    rows = read_csv(d / "latent_V.csv", ["school_id", "student_id", "valuation"])
    for k, r in enumerate(rows):
        try:
            j, i = s_idx[r["school_id"]], t_idx[r["student_id"]]
            V[j, i] = float(r["valuation"])
        except (KeyError, ValueError):
            raise MarketError(f"latent_V.csv line {k + 2}: bad entry {r}") from None
        acc[j, i] = r.get("acceptable", "1") not in ("0", "false", "False")
    if np.isnan(U).any() or np.isnan(V).any():
        raise MarketError("latent files do not cover every student-school pair")
    return U, V, acc


# -- covariates -------------------------------------------------------------

def _column(market: Market, name: str) -> np.ndarray:
    """(T, S) values of a named covariate from the pair, school or student tables."""
    T, S = len(market.students), len(market.schools)
    if any(name in v for v in market.pair_covariates.values()):
        out = np.full((T, S), np.nan)
        for (t, s), v in market.pair_covariates.items():
            if name in v:
                out[market.student_index[t], market.school_index[s]] = v[name]
        if np.isnan(out).any():
            raise MarketError(f"pair covariate {name!r} is missing for some pairs")
        return out
    if any(name in v for v in market.school_covariates.values()):
        row = [market.school_covariates.get(s, {}).get(name) for s in market.schools]
        if None in row:
            raise MarketError(f"school covariate {name!r} is missing for some schools")
        return np.broadcast_to(np.array(row, float), (T, S)).copy()
    if any(name in v for v in market.student_covariates.values()):
        col = [market.student_covariates.get(t, {}).get(name) for t in market.students]
        if None in col:
            raise MarketError(f"student covariate {name!r} is missing for some students")
        return np.broadcast_to(np.array(col, float)[:, None], (T, S)).copy()
    if name in ("1", "const"):
        return np.ones((T, S))
    raise MarketError(f"unknown covariate {name!r}")


def covariate_tensor(market: Market, names: Sequence[str]) -> np.ndarray:
    """(T, S, len(names)) covariates; ``a*b`` multiplies two columns."""
    T, S = len(market.students), len(market.schools)
    cols = []
    for name in names:
        val = np.ones((T, S))
        for part in name.split("*"):
            val = val * _column(market, part.strip())
        cols.append(val)
    if not cols:
        raise MarketError("at least one covariate is required")
    return np.stack(cols, axis=2)
