import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lassoldp import ControlPath, ForcingPath, InputError, PiecewisePath, Trajectory


def test_piecewise_path_auto_flags():
    phi = PiecewisePath([0, 0.5, 1], [[0.0, 1.0], [0.0, 2.0], [1.0, 2.0]])
    assert phi.zero_flags.tolist() == [[True, False], [False, False]]
    assert phi.d == 2 and phi.horizon == 1.0


def test_piecewise_path_rejects_broken_invariants():
    with pytest.raises(InputError, match="interval 0, coordinate 0"):
        PiecewisePath([0, 1], [[1.0], [-1.0]])
    with pytest.raises(InputError, match="zero flag"):
        PiecewisePath([0, 1], [[0.0], [1.0]], [[True]])
    with pytest.raises(InputError):
        PiecewisePath([0, 0.5, 0.4], [[1.0], [1.0], [1.0]])
    with pytest.raises(InputError):
        PiecewisePath([0.1, 1], [[1.0], [1.0]])


def test_path_json_roundtrip():
    phi = PiecewisePath([0, 0.25, 1], [[1.0], [0.0], [0.0]])
    back = PiecewisePath.from_dict(phi.to_dict())
    assert np.array_equal(back.values, phi.values)
    assert np.array_equal(back.zero_flags, phi.zero_flags)


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=12), st.integers(0, 1000))
def test_from_nodes_always_valid_and_interpolates(vals, seed):
    rng = np.random.default_rng(seed)
    vals = np.array(vals)
    vals[rng.random(vals.size) < 0.3] = 0.0
    times = np.linspace(0, 1, vals.size)
    phi = PiecewisePath.from_nodes(times, vals)
    assert np.allclose(phi(times)[:, 0], vals, atol=1e-12)
    phi.validate()


def test_refine_keeps_geometry():
    phi = PiecewisePath([0, 0.5, 1], [[1.0], [0.0], [0.0]])
    fine = phi.refine([0.25, 0.75])
    t = np.linspace(0, 1, 101)
    assert np.allclose(fine(t), phi(t))
    assert fine.zero_flags[:, 0].tolist() == [False, False, True, True]


def test_forcing_path():
    f = ForcingPath([0, 0.5, 1], [[1.0], [-2.0]])
    assert f(0.25)[0] == 1.0 and f(0.5)[0] == -2.0 and f(1.0)[0] == -2.0
    assert ForcingPath.from_dict(f.to_dict()).values.tolist() == [[1.0], [-2.0]]
    assert ForcingPath.constant([3.0]).horizon == 1.0


def test_control_energy_piecewise_constant():
    v = ControlPath([0, 0.25, 1], [[2.0, 0.0], [1.0, -1.0]])
    assert v.energy() == pytest.approx(0.25 * 4 + 0.75 * 2)


def test_trajectory_csv_roundtrip():
    tr = Trajectory(np.array([0.0, 0.5, 1.0]), np.array([[0.1, 0.0], [1 / 3, 0.0], [0.0, -2.0]]))
    text = tr.to_csv(header="cfg")
    assert text.splitlines()[0] == "# cfg"
    assert text.splitlines()[1] == "t,x_1,x_2,frozen_mask"
    back = Trajectory.from_csv(io.StringIO(text))
    assert np.array_equal(back.states, tr.states)
    assert np.array_equal(back.times, tr.times)
