import json
import time

import pytest

from consolidation import io as cio
from consolidation.cli import main


def run(argv, capsys, environ=None):
    code = main([str(a) for a in argv], environ=environ or {})
    out, err = capsys.readouterr()
    return code, out, err


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def digests(d):
    return {p.name: cio.file_digest(p) for p in sorted(d.glob("*.csv"))}


def test_generate_uniform(tmp_path, capsys):
    spec = write(tmp_path / "u.json", {"kind": "uniform", "districts": [{"n": 2, "k": 1}],
                                       "q": 1, "seed": 7})
    code, out, _ = run(["generate", spec, "--out", tmp_path / "a"], capsys)
    assert code == 0
    info = json.loads(out)
    assert info["students"] == 2 and info["schools"] == 3
    run(["generate", spec, "--out", tmp_path / "b"], capsys)
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["seed"] == 7


def test_generate_dgp(tmp_path, capsys):
    spec = write(tmp_path / "d.json", {"kind": "dgp", "T": 200, "seed": 1, "n_boot": 5})
    code, out, _ = run(["generate", spec, "--out", tmp_path / "m"], capsys)
    assert code == 0
    info = json.loads(out)
    assert (info["students"], info["schools"], info["seats"]) == (200, 6, 190)
    assert (tmp_path / "m" / "matching.csv").is_file()


def test_generate_toml_and_errors(tmp_path, capsys):
    toml = tmp_path / "u.toml"
    toml.write_text('kind = "uniform"\nq = 1\n\n[[districts]]\nn = 3\nk = 0\n')
    code, out, _ = run(["generate", toml, "--out", tmp_path / "t"], capsys)
    assert code == 0 and json.loads(out)["students"] == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "kind": "uniform",\n  "districts": []\n}')
    code, _, err = run(["generate", bad, "--out", tmp_path / "x"], capsys)
    assert code == 1
    assert "line 3" in json.loads(err)["message"]
    code, _, err = run(["generate", tmp_path / "missing.json", "--out", tmp_path / "x"], capsys)
    assert code == 3


def test_match_example1(example1_dir, tmp_path, capsys):
    code, out, _ = run(["match", example1_dir, "--scheme", "--out", tmp_path], capsys)
    assert code == 0
    info = json.loads(out)
    assert info["blocking_pairs"] == 0 and info["-"] == 2 and info["+"] == 0
    rows = cio.read_csv(tmp_path / "scheme.csv")
    layers = {}
    for r in rows:
        layers.setdefault(r["layer"].split(":")[0], {})[r["student_id"]] = r["school_id"]
    assert layers["consolidated"] == {"t1": "s1", "t2": "s2", "t3": "s3"}
    assert layers["district"] == {"t1": "s2", "t2": "s1", "t3": "s3"}


def test_match_empty_list_unmatched(tmp_path, capsys):
    spec = write(tmp_path / "u.json", {"districts": [{"n": 3, "k": 0}], "seed": 2})
    run(["generate", spec, "--out", tmp_path / "m"], capsys)
    rols = cio.read_csv(tmp_path / "m" / "rols.csv")
    first = rols[0]["student_id"]
    kept = [r for r in rols if r["student_id"] != first]
    cio.write_csv(tmp_path / "m" / "rols.csv", kept, list(rols[0]))
    code, out, _ = run(["match", tmp_path / "m", "--out", tmp_path / "o"], capsys)
    assert code == 0 and json.loads(out)["blocking_pairs"] == 0
    got = {r["student_id"]: r["school_id"] for r in cio.read_csv(tmp_path / "o" / "matching.csv")}
    assert got[first] == cio.UNMATCHED


@pytest.fixture
def city(tmp_path, capsys):
    spec = write(tmp_path / "c.json", {"kind": "city", "n_districts": 2,
                                       "students_per_district": 10,
                                       "schools_per_district": 2, "seed": 3})
    assert run(["generate", spec, "--out", tmp_path / "city"], capsys)[0] == 0
    assert run(["match", tmp_path / "city", "--out", tmp_path / "mt"], capsys)[0] == 0
    return tmp_path


def test_estimate_smoke(city, capsys):
    spec = write(city / "e.json", {"mode": "STAB_UNDOM", "iterations": 50, "burn_in": 10,
                                   "x": ["distance"], "w": ["1"], "seed": 5})
    args = ["estimate", city / "city", spec, "--matching", city / "mt" / "matching.csv"]
    t0 = time.time()
    code, out, _ = run(args + ["--out", city / "e1"], capsys)
    assert code == 0 and time.time() - t0 < 10
    diag = json.loads((city / "e1" / "diagnostics.json").read_text())
    assert diag["stability_audit_passed"] is True
    assert diag["clamped_U"] == 0 and diag["clamped_V"] == 0
    run(args + ["--out", city / "e2"], capsys)
    for name in ("posterior.csv", "latent_U.csv", "latent_V.csv"):
        assert cio.file_digest(city / "e1" / name) == cio.file_digest(city / "e2" / name)


def test_estimate_rejects_unknown_mode(city, capsys):
    spec = write(city / "e.json", {"mode": "TRUTH", "x": ["distance"], "w": ["1"]})
    code, _, err = run(["estimate", city / "city", spec, "--out", city / "e"], capsys)
    assert code == 1 and "unknown mode" in json.loads(err)["message"]


def test_welfare_balanced(city, capsys):
    code, out, _ = run(["welfare", city / "city", "--balanced", "--distance-covariate",
                        "distance", "--distance-coef", "-2.0", "--out", city / "w"], capsys)
    assert code == 0
    rows = cio.read_csv(city / "w" / "districts.csv")
    for r in rows:
        assert r["seats"] == r["students"]
    summary = json.loads((city / "w" / "summary.json").read_text())
    for key in ("mean", "sd", "min", "median", "max", "N"):
        assert key in summary["total"]
    assert summary["identity_max_gap"] <= 1e-9
    assert "total_km" in summary


def test_mc_smoke(tmp_path, capsys):
    spec = write(tmp_path / "mc.json", {"kind": "estimator", "T": 30, "reps": 2, "n_boot": 5,
                                        "modes": ["BENCHMARK", "WTT"],
                                        "estimator": {"iterations": 30, "burn_in": 10}})
    code, out, _ = run(["mc", spec, "--out", tmp_path / "o"], capsys)
    assert code == 0
    scores = cio.read_csv(tmp_path / "o" / "mc_scores.csv")
    assert len(scores) == 2 * 4
    assert len({(r["mode"], r["parameter"]) for r in scores}) == 8
    assert "benchmark_dominates" in json.loads(out)


def test_mc_gains_grid(tmp_path, capsys):
    spec = write(tmp_path / "g.json", {"kind": "gains", "reps": 5,
                                       "districts": [{"n": 10, "k": -2}, {"n": 10, "k": 2}]})
    code, _, _ = run(["mc", spec, "--out", tmp_path / "o"], capsys)
    assert code == 0
    assert len(cio.read_csv(tmp_path / "o" / "gains_grid.csv")) == 2


def test_env_override_and_flag_precedence(tmp_path, capsys):
    spec = write(tmp_path / "u.json", {"districts": [{"n": 2, "k": 0}], "seed": 1})
    env = {"CONSOLIDATION_SEED": "9"}
    run(["generate", spec, "--out", tmp_path / "a"], capsys, env)
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 9
    run(["generate", spec, "--out", tmp_path / "b", "--seed", "4"], capsys, env)
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 4
    code, _, _ = run(["generate", spec], capsys, {"CONSOLIDATION_OUT": str(tmp_path / "c")})
    assert code == 0 and (tmp_path / "c" / "students.csv").is_file()


def test_report(example1_dir, tmp_path, capsys):
    run(["match", example1_dir, "--out", tmp_path], capsys)
    code, out, _ = run(["report", tmp_path], capsys)
    assert code == 0 and "manifest.json" in out
    code, _, _ = run(["report", tmp_path / "nowhere"], capsys)
    assert code == 3
