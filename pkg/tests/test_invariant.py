import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erfc

from lassoldp import (DomainError, GibbsSpec, InputError, Problem, SdeConfig, adaptive_simpson,
                      integrated_autocorr_time, langevin_moments, log_density_unnorm, poincare_constant, potential,
                      quadrature_moments_1d, variance_decay_check)

from conftest import random_problem

# E|x| under the density proportional to exp(-(x^2 + 2|x|)), by completing the square
EABS = math.exp(-1.0) / (math.sqrt(math.pi) * erfc(1.0)) - 1.0


def test_log_density_examples(canonical):
    spec = GibbsSpec(canonical, 1.0)
    assert log_density_unnorm(spec, [0.0]) == 0.0
    assert log_density_unnorm(spec, [1.0]) == -3.0
    with pytest.raises(InputError):
        GibbsSpec(canonical, 0.0)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 2.0))
def test_log_density_differences(seed, eps):
    rng = np.random.default_rng(seed)
    P = random_problem(rng, 3, 2)
    spec = GibbsSpec(P, eps)
    x, z = rng.standard_normal(2), rng.standard_normal(2)
    diff = log_density_unnorm(spec, x) - log_density_unnorm(spec, z)
    assert diff == pytest.approx(-(2 / eps ** 2) * (potential(P, x) - potential(P, z)), rel=1e-10, abs=1e-10)


@given(st.integers(0, 2 ** 32 - 1))
def test_log_concave_along_segments(seed):
    rng = np.random.default_rng(seed)
    P = random_problem(rng, 3, 3)
    spec = GibbsSpec(P, rng.uniform(0.2, 2))
    a, b = rng.standard_normal(3) * 3, rng.standard_normal(3) * 3
    mid = log_density_unnorm(spec, 0.5 * (a + b))
    assert mid >= 0.5 * (log_density_unnorm(spec, a) + log_density_unnorm(spec, b)) - 1e-9


def test_adaptive_simpson():
    assert adaptive_simpson(np.sin, 0.0, np.pi, 1e-12) == pytest.approx(2.0, abs=1e-10)
    v = adaptive_simpson(lambda x: np.array([1.0, x, np.exp(-x * x)]), -3.0, 3.0, 1e-12)
    assert v == pytest.approx([6.0, 0.0, math.sqrt(math.pi) * math.erf(3.0)], abs=1e-10)


def test_quadrature_canonical(canonical):
    m = quadrature_moments_1d(GibbsSpec(canonical, 1.0))
    assert m.mean == pytest.approx(0.0, abs=1e-12)
    assert m.mean_abs == pytest.approx(EABS, rel=1e-8)
    # Z = 2 * int_0^inf exp(-(x^2 + 2x)) dx
    assert m.Z == pytest.approx(math.sqrt(math.pi) * math.e * erfc(1.0), rel=1e-8)
    variances = [quadrature_moments_1d(GibbsSpec(canonical, e)).variance for e in (1.0, 0.5, 0.25)]
    assert variances[0] > variances[1] > variances[2] > 0


def test_quadrature_needs_one_dimension():
    with pytest.raises(DomainError):
        quadrature_moments_1d(GibbsSpec(Problem(np.eye(2), [0.0, 0.0], 1.0), 1.0))


def test_poincare_constant(canonical):
    spec = GibbsSpec(canonical, 1.0)
    C = poincare_constant(spec)
    assert C == pytest.approx(4 * quadrature_moments_1d(spec).variance)
    assert C > poincare_constant(GibbsSpec(canonical, 0.5)) > 0
    with pytest.raises(InputError):
        poincare_constant(GibbsSpec(Problem(np.eye(2), [0.0, 0.0], 1.0), 1.0))


def test_autocorr_time_ar1():
    rng = np.random.default_rng(0)
    phi = 0.8
    x = np.empty(200000)
    x[0] = 0.0
    noise = rng.standard_normal(x.size)
    for k in range(1, x.size):
        x[k] = phi * x[k - 1] + noise[k]
    assert integrated_autocorr_time(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.1)


@pytest.fixture(scope="module")
def langevin_run():
    spec = GibbsSpec(Problem([[1.0]], [0.0], 1.0), 1.0)
    return spec, langevin_moments(spec, SdeConfig(eps=1.0, dt=1e-2, horizon=1000.0, seed=7))


def test_langevin_matches_quadrature(langevin_run):
    spec, lm = langevin_run
    q = quadrature_moments_1d(spec)
    assert abs(lm.mean_abs[0] - q.mean_abs) <= 3 * lm.stderr_mean_abs[0]
    assert abs(lm.mean[0]) <= 3 * lm.stderr_mean[0]
    assert lm.ess > 100


def test_langevin_horizon_doubling(langevin_run):
    spec, lm = langevin_run
    lm2 = langevin_moments(spec, SdeConfig(eps=1.0, dt=1e-2, horizon=2000.0, seed=7))
    assert abs(lm2.mean_abs[0] - lm.mean_abs[0]) <= 3 * math.hypot(lm.stderr_mean_abs[0], lm2.stderr_mean_abs[0])


def test_langevin_matches_quadrature_shifted():
    spec = GibbsSpec(Problem([[1.5]], [1.0], 0.5), 0.7)
    lm = langevin_moments(spec, SdeConfig(eps=0.7, dt=1e-2, horizon=1000.0, seed=3))
    q = quadrature_moments_1d(spec)
    assert abs(lm.mean[0] - q.mean) <= 3 * lm.stderr_mean[0]
    assert abs(lm.mean_abs[0] - q.mean_abs) <= 3 * lm.stderr_mean_abs[0]


def test_variance_decay_check(canonical):
    spec = GibbsSpec(canonical, 1.0)
    rep = variance_decay_check(spec, SdeConfig(eps=1.0, dt=1e-2, seed=3), replicas=200, inner=100)
    assert rep.times[0] == 0.0
    # at t = 0 the conditional mean is f itself
    assert abs(rep.cond_var[0] - rep.var_f) <= 3 * rep.stderr[0]
    assert rep.bound[0] == rep.var_f
    assert rep.all_hold
    assert rep.decay_rate >= 1 / rep.C
    assert rep.to_csv().splitlines()[0] == "t,cond_var,bound,stderr"


def test_variance_decay_check_rejects(canonical):
    spec = GibbsSpec(canonical, 1.0)
    with pytest.raises(InputError):
        variance_decay_check(spec, SdeConfig(eps=1.0, dt=1e-2), replicas=50)
    with pytest.raises(InputError):
        variance_decay_check(spec, SdeConfig(eps=1.0, dt=1e-2), test_fn="cubic")
