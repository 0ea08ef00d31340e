import json
import math
import shutil
import subprocess
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import kstest

from genrel.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_EXPERIMENT, EXIT_OK, CsvFormatError,
                        main, parse_tuning, read_trait_csv, relate_report, write_trait_csv)
from genrel.core import PairedStudy, center_study
from genrel.lasso import CrossValidate, FixedC, fit, lambda_from_constant
from genrel.simgen import SimDesign, sample_study

import oracles

DATA = Path(__file__).parent / "data"


def schema(name):
    return json.loads(resources.files("genrel").joinpath(f"schemas/{name}").read_text())


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- trait files -----------------------------------------------------------------


def test_trait_csv_round_trip(tmp_path):
    r = np.random.default_rng(0)
    M, y = r.standard_normal((7, 3)), r.integers(0, 2, 7).astype(float)
    write_trait_csv(tmp_path / "t.csv", M, y)
    M2, y2 = read_trait_csv(tmp_path / "t.csv")
    assert np.array_equal(M, M2) and np.array_equal(y, y2)


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("x1,x2\n1,2\n", 1),
    ("y,x2\n1,2\n", 1),
    ("y,x1,x2\n1,0.5,0.1\n0,0.3\n", 3),
    ("y,x1\n1,0.5\n0,abc\n", 3),
    ("y,x1\n", 2),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(CsvFormatError) as info:
        read_trait_csv(f)
    assert info.value.line == line
    assert f"bad.csv:{line}:" in str(info.value)


def test_parse_tuning():
    assert parse_tuning("fixed:0.2") == FixedC(0.2)
    assert parse_tuning("fixed") == FixedC()
    assert parse_tuning("cv:0.1,0.2", seed=4) == CrossValidate(grid=(0.1, 0.2), seed=4)
    for bad in ("lasso", "fixed:-1", "cv:a,b"):
        with pytest.raises(ValueError):
            parse_tuning(bad)


# -- relate ----------------------------------------------------------------------


def test_golden_relate_output(tmp_path, capsys):
    code, out, _ = run(["relate", DATA / "relate" / "trait_y.csv", DATA / "relate" / "trait_w.csv",
                        "--seed", 0], capsys)
    assert code == EXIT_OK
    assert out == (DATA / "relate" / "expected.json").read_text()


def test_golden_relate_agrees_with_oracles():
    doc = json.loads((DATA / "relate" / "expected.json").read_text())
    X, y = read_trait_csv(DATA / "relate" / "trait_y.csv")
    Z, w = read_trait_csv(DATA / "relate" / "trait_w.csv")
    s, _ = center_study(PairedStudy(X, y, Z, w))
    n1, n2, p = len(y), len(w), X.shape[1]
    fy = fit(s.X, y, lambda_from_constant(0.12, n1, p))
    fw = fit(s.Z, w, lambda_from_constant(0.12, n2, p))
    a, b = oracles.prox_grad_lasso(s.X, y, fy.lam, iters=300_000)
    assert np.max(np.abs(fy.coefficients - b)) <= 1e-4
    cov, vy, vw = oracles.estimates(s.X, y, s.Z, w, fy.intercept, fy.coefficients,
                                    fw.intercept, fw.coefficients)
    v2, vb, vg = oracles.asymptotic_variances(s.X, s.Z, fy.intercept, fy.coefficients,
                                              fw.intercept, fw.coefficients)
    z = ndtri(0.975)
    N = n1 + n2
    res = {r["target"]: r for r in doc["results"]}
    for t, point, var in (("covariance", cov, v2), ("variance_y", vy, vb), ("variance_w", vw, vg)):
        assert res[t]["point"] == pytest.approx(point, abs=1e-12)
        assert res[t]["ci_lower"] == pytest.approx(point - z * math.sqrt(var / N), abs=1e-9)
        assert res[t]["ci_upper"] == pytest.approx(point + z * math.sqrt(var / N), abs=1e-9)
    assert res["correlation"]["point"] == pytest.approx(cov / math.sqrt(vy * vw), abs=1e-12)
    assert doc["variances"]["v2_R"] == pytest.approx(v2 / (vy * vw), rel=1e-10)


def test_relate_formats_and_schema(tmp_path, capsys):
    files = [DATA / "relate" / "trait_y.csv", DATA / "relate" / "trait_w.csv"]
    code, out, _ = run(["relate", *files, "--bonferroni", 10], capsys)
    doc = json.loads(out)
    jsonschema.validate(doc, schema("relate_report.schema.json"))
    assert all(r["p_bonferroni"] == min(1.0, 10 * r["p_value"]) for r in doc["results"])
    code, out, _ = run(["relate", *files, "--format", "csv"], capsys)
    assert out.splitlines()[0].startswith("target,point") and len(out.splitlines()) == 5
    code, out, _ = run(["relate", *files, "--format", "md"], capsys)
    assert len([l for l in out.splitlines() if l.startswith("| ")]) == 5


def test_relate_unavailable_correlation(tmp_path, capsys):
    r = np.random.default_rng(1)
    X = r.standard_normal((40, 5))
    y = (r.random(40) < 0.5).astype(float)
    write_trait_csv(tmp_path / "y.csv", X, y)
    write_trait_csv(tmp_path / "w.csv", X[::-1], y)
    code, out, err = run(["relate", tmp_path / "y.csv", tmp_path / "w.csv", "--tuning", "fixed:5"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, schema("relate_report.schema.json"))
    corr = doc["results"][3]
    assert corr["status"] == "unavailable" and "unavailable" in corr["reason"]
    assert doc["variances"]["v2_R"] is None
    assert "unavailable" in err


def test_simulate_then_relate(tmp_path, capsys):
    design = {"n1": 50, "n2": 45, "p": 12, "k": 3, "m": 10, "sigma_kind": "exchangeable", "blocks": 2}
    (tmp_path / "d.json").write_text(json.dumps(design))
    assert run(["simulate", tmp_path / "d.json", "--out-dir", tmp_path / "a", "--seed", 5], capsys)[0] == 0
    assert run(["simulate", tmp_path / "d.json", "--out-dir", tmp_path / "b", "--seed", 5], capsys)[0] == 0
    for f in ("trait_y.csv", "trait_w.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    assert -1 <= truth["correlation"] <= 1 and truth["overlap"] == 10
    code, out, _ = run(["relate", tmp_path / "a" / "trait_y.csv", tmp_path / "a" / "trait_w.csv",
                        "--scenario", "overlapped", "--overlap", 10], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["scenario"] == "overlapped" and doc["overlap"] == 10
    jsonschema.validate(doc, schema("relate_report.schema.json"))


def test_overlapped_with_m0_matches_independent(capsys):
    files = [DATA / "relate" / "trait_y.csv", DATA / "relate" / "trait_w.csv"]
    _, a, _ = run(["relate", *files], capsys)
    code, b, _ = run(["relate", *files, "--scenario", "overlapped", "--overlap", 0], capsys)
    assert code == EXIT_OK and a == b


def test_relate_error_exit_codes(tmp_path, capsys):
    files = [DATA / "relate" / "trait_y.csv", DATA / "relate" / "trait_w.csv"]
    (tmp_path / "bad.csv").write_text("y,x1\n1,2\n0,oops\n")
    code, _, err = run(["relate", tmp_path / "bad.csv", files[1]], capsys)
    assert code == EXIT_DATA and "bad.csv:3" in err
    code, _, err = run(["relate", *files, "--scenario", "independent", "--overlap", 3], capsys)
    assert code == EXIT_CONFIG
    code, _, err = run(["relate", *files, "--overlap", 3], capsys)
    assert code == EXIT_DATA and "shared rows differ" in err
    code, _, err = run(["relate", *files, "--scenario", "overlapped", "--overlap", 3], capsys)
    assert code == EXIT_DATA and "shared rows differ" in err
    code, _, err = run(["relate", *files, "--tuning", "magic"], capsys)
    assert code == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["relate", *map(str, files), "--alpha", "1.5"])
    capsys.readouterr()
    code, _, _ = run(["relate", tmp_path / "missing.csv", files[1]], capsys)
    assert code == EXIT_CONFIG


def test_identity_link_accepts_continuous_response(tmp_path, capsys):
    r = np.random.default_rng(3)
    X = r.standard_normal((50, 6))
    write_trait_csv(tmp_path / "y.csv", X, X[:, 0] + r.standard_normal(50))
    write_trait_csv(tmp_path / "w.csv", X, X[:, 0] + r.standard_normal(50))
    code, _, _ = run(["relate", tmp_path / "y.csv", tmp_path / "w.csv"], capsys)
    assert code == EXIT_DATA
    code, out, _ = run(["relate", tmp_path / "y.csv", tmp_path / "w.csv", "--link", "identity"], capsys)
    assert code == EXIT_OK and json.loads(out)["link"] == "identity"


def test_missing_seed_is_drawn_and_printed(capsys):
    files = [DATA / "relate" / "trait_y.csv", DATA / "relate" / "trait_w.csv"]
    code, out, err = run(["relate", *files, "--split"], capsys)
    assert code == EXIT_OK
    seed = int(err.split("seed:")[1].split()[0])
    assert json.loads(out)["seed"] == seed


def test_fit_subcommand(capsys):
    code, out, _ = run(["fit", DATA / "relate" / "trait_y.csv"], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["converged"] and doc["p"] == 15
    assert doc["support"] == [j for j, b in enumerate(doc["coefficients"]) if b != 0]


@pytest.mark.slow
def test_null_p_values_roughly_uniform(tmp_path):
    pvals = []
    for seed in range(60):
        s, _ = sample_study(SimDesign(n1=150, n2=150, p=30, k=0, sigma_kind="identity", seed=seed))
        doc = relate_report(s)
        pvals.append(doc["results"][0]["p_value"])
    # Kolmogorov-Smirnov against U(0, 1), loose since the null is only asymptotic
    assert kstest(pvals, "uniform").pvalue > 0.001


# -- mc ----------------------------------------------------------------------------


def test_mc_tiny_spec_fast_and_stable(tmp_path, capsys):
    spec = DATA / "mc_tiny_spec.json"
    t0 = time.perf_counter()
    code, a, _ = run(["mc", spec, "--kind", "coverage", "--canonical"], capsys)
    elapsed = time.perf_counter() - t0
    assert code == EXIT_OK and elapsed < 10.0
    code, b, _ = run(["mc", spec, "--kind", "coverage", "--canonical"], capsys)
    assert a == b == (DATA / "mc_tiny_coverage.json").read_text()
    jsonschema.validate(json.loads(a), schema("mc_report.schema.json"))
    code, md, _ = run(["mc", spec, "--format", "md"], capsys)
    assert len([l for l in md.splitlines()[2:] if l.startswith("|")]) == 2 * 4


def test_mc_errors(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"rounds": 0}))
    assert run(["mc", tmp_path / "bad.json"], capsys)[0] == EXIT_CONFIG
    failing = {"design": {"n1": 20, "n2": 20, "p": 10, "k": 2, "blocks": 2, "intercepts": [60, 0]},
               "rounds": 2, "tuning": {"rule": "cv", "folds": 2}, "seed": 1}
    (tmp_path / "fail.json").write_text(json.dumps(failing))
    code, out, err = run(["mc", tmp_path / "fail.json"], capsys)
    assert code == EXIT_EXPERIMENT and "experiment error" in err
    assert json.loads(out)["rounds_failed"] == 2


def test_console_script_entry_point():
    exe = shutil.which("genrel")
    cmd = [exe] if exe else [sys.executable, "-m", "genrel.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "0.1.0"
