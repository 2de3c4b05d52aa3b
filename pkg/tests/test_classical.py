import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relbohm.canonical import plane_wave, two_mode_1d
from relbohm.classical import (
    ClassicalState,
    classical_trajectory,
    delta_equivariance_check,
    many_time_identity_residual,
    nonrel_limit_check,
    proper_time_along,
)
from relbohm.dynamics import integrate
from relbohm.errors import DimensionError, PreconditionError
from relbohm.minkowski import dot

E06 = np.sqrt(1.36)


def test_rest_particle():
    cs = ClassicalState.from_p3([1.0], [[0, 0, 0]])
    assert np.array_equal(cs.momenta, [[1, 0, 0, 0]])
    t = classical_trajectory(cs, np.zeros((1, 4)), (0, 5))
    assert np.allclose(t.final, [[5, 0, 0, 0]])


def test_moving_particle_example():
    cs = ClassicalState.from_p3([1.0], [[0.6, 0, 0]])
    t = classical_trajectory(cs, np.zeros((1, 4)), (0, 5))
    assert np.allclose(t.final, [[5 * E06, 3, 0, 0]], atol=1e-12)
    assert proper_time_along(t) == pytest.approx(5.0, rel=1e-12)
    assert t.meta["parameter"] == "tau"


def test_off_shell_rejected():
    with pytest.raises(ValueError):
        ClassicalState([1.0], [[1.0, 0.5, 0, 0]])
    with pytest.raises(ValueError):
        ClassicalState([0.0], [[1.0, 1.0, 0, 0]])
    with pytest.raises(DimensionError):
        ClassicalState([1.0, 2.0], [[1.0, 0, 0, 0]])


def test_only_single_mode_states():
    with pytest.raises(ValueError):
        ClassicalState.from_plane_wave(two_mode_1d())


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0.2, 5))
def test_classical_velocity_unit_norm(p3, m):
    cs = ClassicalState.from_p3([m], [p3])
    assert dot(cs.velocities, cs.velocities)[0] == pytest.approx(1.0, abs=1e-10)
    t = classical_trajectory(cs, np.zeros((1, 4)), (0, 2.0), samples=11)
    assert proper_time_along(t) == pytest.approx(2.0, rel=1e-9)


@pytest.mark.parametrize("p3", [(0.6, 0, 0), (0.9, 0.3, -0.2), (0, 0, 0)])
def test_quantum_matches_classical_for_single_mode(p3):
    s = plane_wave(p3=p3)
    x0 = np.array([[1.0, 2.0, 3.0, 4.0]])
    q = integrate(s, x0, (0, 5))
    c = classical_trajectory(ClassicalState.from_plane_wave(s), x0, (0, 5), samples=len(q.s))
    assert np.allclose(q.X, c.X, atol=1e-10)


# -- delta-function ensemble -----------------------------------------------------------


def test_delta_static_particle():
    traj = classical_trajectory(ClassicalState.from_p3([1.0], [[0, 0, 0]]), np.zeros((1, 4)), (0, 5))
    rep = delta_equivariance_check(traj, 0.1, 0.025)
    assert rep.spatial_divergence == 0.0
    assert rep.transport_mismatch < 0.05
    assert rep.marginal_l1 <= 1e-6


def test_delta_refinement_moving():
    traj = classical_trajectory(ClassicalState.from_p3([1.0], [[0.6, 0, 0]]), np.zeros((1, 4)), (0, 5))
    coarse = delta_equivariance_check(traj, 0.2, 0.05)
    fine = delta_equivariance_check(traj, 0.1, 0.025)
    assert coarse.weak_residual / fine.weak_residual >= 1.8
    assert fine.marginal_l1 <= 1e-6


def test_delta_grid_too_coarse():
    traj = classical_trajectory(ClassicalState.from_p3([1.0], [[0.6, 0, 0]]), np.zeros((1, 4)), (0, 5))
    with pytest.raises(ValueError):
        delta_equivariance_check(traj, 0.1, 0.05)


# -- slow limit --------------------------------------------------------------------------


def test_nonrel_at_rest():
    rep = nonrel_limit_check(ClassicalState.from_p3([1.0], [[0, 0, 0]]))
    assert rep.speed == 0 and rep.dtau_dt == pytest.approx(1.0, abs=1e-14)


def test_nonrel_slow_particle():
    rep = nonrel_limit_check(plane_wave(p3=(0.005, 0, 0), mass=1.0))
    assert rep.dtau_dt_deviation <= 2.5e-5
    assert rep.dt_relation_residual < 1e-9
    assert rep.identity_residual < 1e-6


def test_nonrel_refuses_fast():
    with pytest.raises(PreconditionError):
        nonrel_limit_check(ClassicalState.from_p3([1.0], [[0.02, 0, 0]]))


def test_many_time_identity():
    def f(ts):
        return float(np.sin(ts[0]) * np.cos(2 * ts[1]) * np.exp(0.1 * ts[2]))

    # d/dt f(t, t, t) equals the sum of the partials
    assert many_time_identity_residual(f, 0.7, 3) < 1e-6
