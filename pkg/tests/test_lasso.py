import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from genrel.core import LinkKind
from genrel.lasso import (CrossValidate, DivergingInterceptError, FixedC, SolverOptions, fit,
                          kkt_residual, lambda_from_constant, penalized_objective,
                          select_lambda, soft_threshold)
from genrel.simgen import SimDesign, sample_study

from oracles import prox_grad_lasso


def _logistic_data(seed, n, p, scale=1.0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: max(1, p // 4)] = scale
    y = (r.random(n) < 1 / (1 + np.exp(-X @ beta))).astype(float)
    return X, y


def test_soft_threshold_examples():
    assert soft_threshold(3, 1) == 2
    assert soft_threshold(-0.5, 1) == 0
    assert soft_threshold(-2.5, 0) == -2.5
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_lambda_from_constant_examples():
    # 0.12 * sqrt(ln 1000 / 400) = 0.0157696 (the commonly quoted 0.015767 is a rounding slip)
    assert lambda_from_constant(0.12, 400, 1000) == pytest.approx(0.12 * math.sqrt(math.log(1000) / 400), rel=1e-15)
    assert round(lambda_from_constant(0.12, 400, 1000), 4) == 0.0158
    assert lambda_from_constant(1.0, 100, 100) == pytest.approx(0.21460, abs=1e-5)
    assert lambda_from_constant(0.24, 400, 1000) == 2 * lambda_from_constant(0.12, 400, 1000)
    with pytest.raises(ValueError):
        lambda_from_constant(1.0, 10, 1)


def test_zero_design_symmetric_response():
    f = fit(np.zeros((4, 2)), np.array([1, 0, 1, 0]), 0.05)
    assert f.intercept == 0.0
    assert np.all(f.coefficients == 0.0)


def test_null_fit_above_lambda_max():
    X, y = _logistic_data(1, 60, 8)
    X = X - X.mean(axis=0)
    lam_max = max(abs(np.mean(0.5 - y)), np.max(np.abs((0.5 - y) @ X / len(y))))
    f = fit(X, y, lam_max * 1.0001)
    assert f.intercept == 0.0 and np.all(f.coefficients == 0.0)


def test_fixed_instance_against_oracle():
    r = np.random.default_rng(42)
    X = r.standard_normal((8, 3))
    y = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=float)
    f = fit(X, y, 0.1)
    a, b = prox_grad_lasso(X, y, 0.1)
    assert abs(f.intercept - a) <= 1e-5
    assert np.max(np.abs(f.coefficients - b)) <= 1e-5


@given(st.integers(0, 2**31), st.integers(10, 30), st.integers(1, 5),
       st.floats(0.005, 0.2), st.booleans())
def test_matches_oracle_on_tiny_problems(seed, n, p, lam, logistic):
    X, y = _logistic_data(seed, n, p)
    if not logistic:
        y = y + 0.1 * np.random.default_rng(seed + 1).standard_normal(n)
    opts = SolverOptions(link=LinkKind.LOGISTIC if logistic else LinkKind.IDENTITY)
    f = fit(X, y, lam, opts)
    a, b = prox_grad_lasso(X, y, lam, logistic, iters=200_000)
    ours = penalized_objective(X, y, f.intercept, f.coefficients, lam, opts)
    ref = penalized_objective(X, y, a, b, lam, opts)
    assert ours <= ref + 1e-8
    assert abs(ours - ref) <= 1e-8
    assert abs(f.intercept - a) <= 1e-4
    assert np.max(np.abs(f.coefficients - b)) <= 1e-4


@given(st.integers(0, 2**31), st.integers(20, 200), st.integers(2, 100), st.floats(0.02, 0.3))
def test_kkt_certificate(seed, n, p, C):
    X, y = _logistic_data(seed, n, p)
    lam = lambda_from_constant(C, n, p)
    f = fit(X, y, lam)
    assert f.converged
    assert kkt_residual(X, y, f) <= 1e-6


@given(st.integers(0, 2**31))
def test_objective_monotone(seed):
    X, y = _logistic_data(seed, 80, 40, scale=2.0)
    f = fit(X, y, 0.02)
    path = np.array(f.objective_path)
    assert np.all(np.diff(path) <= 0.0)


@given(st.integers(0, 2**31))
def test_column_permutation_permutes_coefficients(seed):
    X, y = _logistic_data(seed, 60, 12)
    perm = np.random.default_rng(seed).permutation(12)
    # tight tolerance so the comparison is not dominated by stopping noise
    opts = SolverOptions(kkt_tolerance=1e-10, objective_tolerance=1e-16)
    a = fit(X, y, 0.03, opts)
    b = fit(X[:, perm], y, 0.03, opts)
    assert np.max(np.abs(b.coefficients - a.coefficients[perm])) <= 1e-7
    assert b.intercept == pytest.approx(a.intercept, abs=1e-7)


def test_unpenalized_intercept_single_class():
    X = np.random.default_rng(0).standard_normal((10, 3))
    with pytest.raises(DivergingInterceptError):
        fit(X, np.ones(10), 0.1, SolverOptions(penalize_intercept=False))
    # the penalized intercept keeps the fit finite
    f = fit(X, np.ones(10), 0.1)
    assert math.isfinite(f.intercept) and f.converged


def test_unpenalized_intercept_kkt():
    X, y = _logistic_data(3, 50, 6)
    opts = SolverOptions(penalize_intercept=False)
    f = fit(X, y, 0.05, opts)
    assert kkt_residual(X, y, f, opts) <= 1e-6


def test_rejects_bad_inputs():
    X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        fit(X, np.array([0, 1, 2]), 0.1)
    with pytest.raises(ValueError):
        fit(X, np.array([0, 1]), 0.1)
    with pytest.raises(ValueError):
        fit(X, np.array([0, 1, 0]), -0.1)


def test_warm_start_reaches_same_fit():
    X, y = _logistic_data(7, 100, 30)
    cold = fit(X, y, 0.02)
    warm = fit(X, y, 0.02, init=(0.3, np.full(30, 0.1)))
    assert np.allclose(cold.coefficients, warm.coefficients, atol=1e-5)


def test_select_lambda_fixed():
    X, y = _logistic_data(0, 400, 1000)
    lam, C, table = select_lambda(X, y, FixedC(0.12))
    assert lam == pytest.approx(0.0157696, abs=1e-7) and C == 0.12 and table == {}


def test_select_lambda_singleton_grid():
    X, y = _logistic_data(0, 50, 10)
    lam, C, table = select_lambda(X, y, CrossValidate(grid=(0.12,), folds=5))
    assert C == 0.12 and list(table) == [0.12]


def test_select_lambda_grid_order_independent():
    X, y = _logistic_data(5, 80, 20)
    a = select_lambda(X, y, CrossValidate(grid=(0.1, 0.3, 0.2), folds=4))
    b = select_lambda(X, y, CrossValidate(grid=(0.3, 0.2, 0.1), folds=4))
    assert a[1] == b[1]
    assert a[2].keys() == b[2].keys()
    for c in a[2]:
        assert a[2][c] == pytest.approx(b[2][c], abs=1e-9)


def test_select_lambda_errors():
    X = np.random.default_rng(0).standard_normal((6, 3))
    with pytest.raises(ValueError):
        select_lambda(X, np.ones(6), CrossValidate(folds=2))
    with pytest.raises(ValueError):
        select_lambda(X, np.array([0, 1] * 3), CrossValidate(folds=10))
    with pytest.raises(ValueError):
        CrossValidate(grid=(0.1, -0.1))
    with pytest.raises(ValueError):
        CrossValidate(folds=1)
    with pytest.raises(ValueError):
        SolverOptions(kkt_tolerance=0)


def test_cv_golden_file():
    gold = json.loads((Path(__file__).parent / "data" / "cv_golden.json").read_text())
    study, _ = sample_study(SimDesign.from_dict(gold["design"]))
    lam, C, table = select_lambda(study.X, study.y, CrossValidate(folds=gold["folds"], seed=gold["cv_seed"]))
    assert C == gold["C"] and lam == gold["lambda"]
    assert {repr(c): v for c, v in table.items()} == gold["cv_table"]
