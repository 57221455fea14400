import numpy as np
import pytest
from hypothesis import given, strategies as st

from lassoldp import (CostFunctional, FeedbackControl, ForcedModel, ForcingPath, InputError, LDPReport,
                      NumericalError, PiecewisePath, Problem, SdeConfig, controlled_cost, laplace_estimate, ldp_report,
                      flow_integrate, rate_functional, sup_distance, variational_infimum)
from lassoldp.ldp import _log_mean_exp_cost

TERMINAL = CostFunctional.terminal([1.0], c=1.0, M=4.0)


def test_cost_functional_values():
    phi = PiecewisePath([0, 1], [[0.0], [3.0]])
    assert TERMINAL(phi) == 4.0
    assert CostFunctional.terminal([1.0], 1.0, 10.0)(phi) == 4.0
    assert CostFunctional.running([0.0], 1.0, 10.0)(phi) == pytest.approx(3.0)
    assert CostFunctional.constant(0.7)(phi) == 0.7
    with pytest.raises(InputError):
        CostFunctional("quartic", z=[0.0])
    with pytest.raises(InputError):
        CostFunctional.terminal([1.0], c=-1.0)
    assert CostFunctional.from_dict(TERMINAL.to_dict()).to_dict() == TERMINAL.to_dict()


@pytest.mark.parametrize("value", [0.7, 0.0])
def test_constant_cost_is_exact(canonical, value):
    for eps in (0.5, 0.1):
        est, se = laplace_estimate(canonical, [0.0], CostFunctional.constant(value),
                                   SdeConfig(eps=eps, dt=1e-2, seed=1), 50)
        assert est == value and se == 0.0


def test_laplace_estimate_canonical(canonical):
    cfg = SdeConfig(eps=0.25, dt=1e-3, seed=99)
    a = laplace_estimate(canonical, [0.0], TERMINAL, cfg, 20000)
    b = laplace_estimate(canonical, [0.0], TERMINAL, cfg, 20000, threads=3)
    assert 0 < a[0] < 4 and a[1] > 0
    assert a == b


def test_laplace_estimate_rejects(canonical):
    with pytest.raises(InputError):
        laplace_estimate(canonical, [0.0], TERMINAL, SdeConfig(eps=0.0, dt=1e-2), 10)
    with pytest.raises(InputError):
        laplace_estimate(canonical, [0.0], TERMINAL, SdeConfig(eps=0.1, dt=1e-2), 1)


def test_log_mean_exp_underflow_and_shift():
    with pytest.raises(NumericalError):
        _log_mean_exp_cost(np.array([1.0, np.inf]), 0.1)
    rng = np.random.default_rng(0)
    h = rng.uniform(0, 4, 1000)
    est, se = _log_mean_exp_cost(h, 0.2)
    est2, se2 = _log_mean_exp_cost(h + 1.5, 0.2)
    assert est2 == pytest.approx(est + 1.5, abs=1e-12) and se2 == pytest.approx(se, rel=1e-12)
    # direct evaluation where it does not underflow
    assert est == pytest.approx(-0.04 * np.log(np.mean(np.exp(-h / 0.04))), rel=1e-12)


def test_cost_domination(canonical):
    cfg = SdeConfig(eps=0.35, dt=1e-3, seed=5)
    h1, h2 = CostFunctional.terminal([1.0], 1.0, 0.5), TERMINAL
    e1, s1 = laplace_estimate(canonical, [0.0], h1, cfg, 4000)
    e2, s2 = laplace_estimate(canonical, [0.0], h2, cfg, 4000)
    assert e1 <= e2 + 3 * np.hypot(s1, s2)
    v1, _ = variational_infimum(canonical, [0.0], h1, m=8, multistarts=4)
    v2, _ = variational_infimum(canonical, [0.0], h2, m=8, multistarts=4)
    assert v1 <= v2


def test_variational_trivial_costs(canonical, y2):
    zero = CostFunctional.constant(0.0)
    v, phi = variational_infimum(canonical, [0.0], zero, m=8, multistarts=3)
    assert v == 0.0
    v, _ = variational_infimum(canonical, [0.0], CostFunctional.constant(0.4), m=8, multistarts=3)
    assert v == pytest.approx(0.4, abs=1e-12)
    # a curved flow is only approximated by m nodes: the value is O(1/m^2) and the path hugs the flow
    values = []
    for m in (8, 16, 32):
        v, phi = variational_infimum(y2, [0.0], zero, m=m, multistarts=2)
        values.append(v)
    assert values[0] > values[1] > values[2] and values[2] <= 1e-4
    assert values[0] / values[2] > 10
    flow = flow_integrate(y2, [0.0], 1.0, 1e-4)
    assert sup_distance(flow.times, flow.states, phi) <= 1e-2


def test_variational_forced_flow_scored():
    f = ForcingPath([0, 0.37, 1], [[2.0], [-0.3]])
    v, _ = variational_infimum(ForcedModel(f, 1.0), [0.0], CostFunctional.constant(0.0), m=6, multistarts=2)
    assert v <= 1e-12


def _endpoint_oracle(P, h):
    """min over endpoints a and waiting times of the cost of 'rest at 0, then move linearly to a'."""
    best = np.inf
    for a in np.linspace(-2, 2, 81):
        for T in np.linspace(0.05, 1.0, 20):
            tw = 1.0 - T
            bp = [0.0, tw, 1.0] if tw > 0 else [0.0, 1.0]
            vals = [[0.0], [0.0], [a]] if tw > 0 else [[0.0], [a]]
            phi = PiecewisePath(bp, vals)
            best = min(best, rate_functional(P, phi).total + h(phi))
    return best


def test_variational_canonical_value(canonical):
    v, phi = variational_infimum(canonical, [0.0], TERMINAL, m=16, multistarts=6)
    assert v <= _endpoint_oracle(canonical, TERMINAL) + 1e-9
    # lower bound: reaching a costs at least 2|a|, so I + h >= 1 + a^2 >= 1
    assert v >= 1.0 - 1e-9
    assert v == pytest.approx(1.0, abs=1e-6)


@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=6), st.integers(0, 99))
def test_variational_upper_bound_property(vals, seed):
    P = Problem([[1.0]], [0.0], 1.0)
    vals = np.array([0.0] + vals)
    vals[np.random.default_rng(seed).random(vals.size) < 0.3] = 0.0
    phi = PiecewisePath.from_nodes(np.linspace(0, 1, vals.size), vals)
    assert 1.0 - 1e-9 <= rate_functional(P, phi).total + TERMINAL(phi)


def test_feedback_control_upper_bound(canonical):
    # rest at zero: the flagged-interval feedback pulls towards 0 from both sides
    phi = PiecewisePath([0, 1], [[0.0], [0.0]])
    v = FeedbackControl(canonical, phi)
    X = np.array([[-0.2], [0.0], [0.3]])
    assert np.allclose(v(0.5, X)[:, 0], [1.0 - (1.0 - (-0.2)), 1.0 - 1.0, -1.0 - (-1.0 - 0.3)])
    for eps in (0.5, 0.35):
        cfg = SdeConfig(eps=eps, dt=1e-3, seed=17)
        H, sH = laplace_estimate(canonical, [0.0], TERMINAL, cfg, 4000)
        C, sC = controlled_cost(canonical, [0.0], TERMINAL, v, cfg, 4000)
        assert H <= C + 3 * np.hypot(sH, sC)


def test_feedback_control_on_moving_path(canonical):
    phi = PiecewisePath([0, 0.5, 1], [[0.0], [0.0], [0.6]])
    v = FeedbackControl(canonical, phi)
    cfg = SdeConfig(eps=0.35, dt=1e-3, seed=18)
    H, sH = laplace_estimate(canonical, [0.0], TERMINAL, cfg, 4000)
    C, sC = controlled_cost(canonical, [0.0], TERMINAL, v, cfg, 4000)
    assert H <= C + 3 * np.hypot(sH, sC)


def test_ldp_report_constant_and_roundtrip(canonical):
    rep = ldp_report(canonical, [0.0], CostFunctional.constant(0.3), [0.5, 0.25],
                     SdeConfig(eps=0.5, dt=1e-2, seed=2), 20, m=4, multistarts=2)
    assert rep.gaps == pytest.approx([0.0, 0.0], abs=1e-9)
    back = LDPReport.from_json(rep.to_json())
    assert back.to_dict() == rep.to_dict()
    assert rep.to_csv().splitlines()[0] == "eps,H,stderr,gap"
    with pytest.raises(InputError):
        ldp_report(canonical, [0.0], TERMINAL, [0.25, 0.5], SdeConfig(eps=0.5, dt=1e-2), 20)
