import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lassoldp import (ConvergenceError, InputError, Problem, branch_drift, drift, kkt_residual, lasso_objective,
                      lasso_solve, residual_gradient, soft_threshold, sticking_set)

from conftest import random_problem


def naive_gradient(P, x):
    n, d = P.A.shape
    r = [sum(P.A[k, j] * x[j] for j in range(d)) - P.y[k] for k in range(n)]
    return np.array([sum(P.A[k, i] * r[k] for k in range(n)) for i in range(d)])


def test_problem_validation():
    with pytest.raises(InputError):
        Problem([[1.0]], [0.0], 0.0)
    with pytest.raises(InputError):
        Problem([[1.0, 2.0]], [0.0, 1.0], 1.0)
    with pytest.raises(InputError):
        Problem([[np.nan]], [0.0], 1.0)


def test_problem_json_roundtrip(tmp_path):
    P = Problem([[1.0, 2.0], [3.0, 4.0]], [0.5, -1.0], 0.3)
    path = tmp_path / "p.json"
    P.to_json(path)
    Q = Problem.from_json(path)
    assert np.array_equal(P.A, Q.A) and np.array_equal(P.y, Q.y) and P.mu == Q.mu
    assert json.loads(path.read_text())["mu"] == 0.3


def test_residual_gradient_examples():
    P = Problem(np.eye(2), [1.0, 2.0], 1.0)
    assert np.array_equal(residual_gradient(P, [0.0, 0.0]), [-1.0, -2.0])
    assert residual_gradient(Problem([[1.0]], [0.0], 1.0), [2.0])[0] == 2.0
    with pytest.raises(InputError):
        residual_gradient(P, [1.0])


def test_residual_gradient_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        P = random_problem(rng, 3, 3)
        x = rng.standard_normal(3)
        assert np.allclose(residual_gradient(P, x), naive_gradient(P, x), atol=1e-12, rtol=0)


def test_drift_examples(canonical, y2):
    assert drift(canonical, [2.0], [1.0])[0] == -3.0
    assert drift(Problem([[1.0]], [2.0], 1.0), [0.0], [0.0])[0] == 2.0
    with pytest.raises(InputError):
        drift(canonical, [2.0], [-1.0])
    with pytest.raises(InputError):
        drift(canonical, [0.0], [1.5])


def test_drift_recomposition():
    rng = np.random.default_rng(1)
    for _ in range(50):
        P = random_problem(rng, 3, 4)
        x = rng.standard_normal(4) * (rng.random(4) < 0.6)
        s = np.where(x != 0, np.sign(x), rng.uniform(-1, 1, 4))
        assert np.allclose(drift(P, x, s), -residual_gradient(P, x) - P.mu * s, atol=1e-14)


def test_branch_drift_examples(canonical, y2):
    assert branch_drift(canonical, [0.0], 0, 1) == 1.0
    assert branch_drift(canonical, [0.0], 0, 2) == -1.0
    assert branch_drift(y2, [0.0], 0, 1) == 3.0
    assert branch_drift(y2, [0.0], 0, 2) == 1.0
    with pytest.raises(InputError):
        branch_drift(canonical, [0.0], 0, 3)


@given(st.integers(0, 2 ** 32 - 1))
def test_branch_drifts_match_forced_selection(seed):
    rng = np.random.default_rng(seed)
    P = random_problem(rng, 3, 3)
    x = rng.standard_normal(3)
    b = drift(P, x, np.sign(x))
    for i in range(3):
        side = 1 if x[i] < 0 else 2
        assert branch_drift(P, x, i, side) == pytest.approx(b[i], abs=1e-13)
        assert branch_drift(P, x, i, 1) - branch_drift(P, x, i, 2) == pytest.approx(2 * P.mu, abs=1e-12)


def test_sticking_set(sticky, y2):
    assert sticking_set(sticky, [0.0], 1e-12) == {0}
    assert sticking_set(y2, [0.0], 1e-12) == set()
    P = Problem(np.diag([1.0, 2.0, 1.0]), [0.5, 3.0, -0.9], 1.0)
    x = np.array([0.0, 0.0, 0.3])
    g = residual_gradient(P, x)
    expect = {i for i in range(3) if abs(x[i]) <= 1e-12 and abs(g[i]) <= 1.0}
    assert sticking_set(P, x, 1e-12) == expect == {0}


def test_soft_threshold():
    assert np.array_equal(soft_threshold(np.array([2.0, -0.5, -3.0]), 1.0), [1.0, 0.0, -2.0])


@pytest.mark.parametrize("y, expect", [(2.0, 1.0), (0.5, 0.0), (-4.0, -3.0)])
def test_lasso_solve_soft_threshold_oracle(y, expect):
    P = Problem([[1.0]], [y], 1.0)
    x = lasso_solve(P)
    assert x[0] == pytest.approx(np.sign(y) * max(abs(y) - 1.0, 0.0), abs=1e-10)
    # grid minimization of the objective as a second oracle
    grid = np.linspace(-5, 5, 100001)
    obj = 0.5 * (grid - y) ** 2 + np.abs(grid)
    assert x[0] == pytest.approx(grid[np.argmin(obj)], abs=1e-4)
    assert kkt_residual(P, x) <= 1e-10


def test_large_mu_gives_zero():
    rng = np.random.default_rng(2)
    P0 = random_problem(rng, 4, 3)
    P = Problem(P0.A, P0.y, np.abs(P0.A.T @ P0.y).max() * 1.01)
    assert np.array_equal(lasso_solve(P), np.zeros(3))


def test_kkt_examples(y2, sticky):
    assert kkt_residual(y2, [1.0]) == 0.0
    assert kkt_residual(sticky, [0.0]) == 0.0
    assert kkt_residual(y2, [0.0]) == pytest.approx(1.0)


def test_lasso_solve_objective_bounds():
    rng = np.random.default_rng(3)
    for _ in range(10):
        P = random_problem(rng, 5, 3)
        res = lasso_solve(P, return_info=True)
        assert res.residual <= 1e-10
        ls = np.linalg.lstsq(P.A, P.y, rcond=None)[0]
        f = lasso_objective(P, res.x)
        assert f <= lasso_objective(P, np.zeros(3)) + 1e-12
        assert f <= lasso_objective(P, ls) + 1e-12


def test_lasso_solve_convergence_error():
    P = Problem([[1, 0.99, 0.5], [0.99, 1, 0.3], [0.2, 0.1, 1]], [1, -2, 0.5], 0.1)
    with pytest.raises(ConvergenceError) as info:
        lasso_solve(P, max_iter=1)
    assert info.value.x.shape == (3,)
    assert info.value.residual > 1e-10
    assert info.value.iterations == 1
