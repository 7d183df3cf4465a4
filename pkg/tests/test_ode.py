from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from nhsync.errors import DomainError, IntegrationError, NonFiniteError
from nhsync.models import PoincareParams, class1_neuron, ClassINeuronParams, poincare_cartesian, poincare_polar
from nhsync.ode import (
    SystemSpec,
    Trajectory,
    fd_jacobian,
    integrate,
    integrate_with_tangents,
    jacobian_check,
    lyapunov_spectrum,
    propagate,
    sample_flow,
)


def linear(A):
    A = np.asarray(A, dtype=float)
    return SystemSpec(A.shape[0], lambda x, t: A @ x, lambda x, t: A)


def test_constant_field_is_exact():
    sys = SystemSpec(1, lambda x, t: np.zeros(1))
    tr = integrate(sys, [1.0], 0.0, 10.0)
    assert tr.final[0] == 1.0


def test_exponential_growth():
    tr = integrate(linear([[1.0]]), [1.0], 0.0, 1.0, tol=1e-10)
    assert abs(tr.final[0] - math.e) < 1e-8


def test_polar_cylinder_invariant():
    p = PoincareParams(alpha=1.0, a=1.3, gamma=0.0)
    tr = integrate(poincare_polar(p), [0.2, 1.3], 0.0, 50.0, tol=1e-10)
    assert np.max(np.abs(tr.states[:, 1] - 1.3)) < 1e-9


def test_backward_integration_stores_ascending_times():
    tr = integrate(linear([[-1.0]]), [1.0], 2.0, 0.0, tol=1e-10)
    assert tr.times[0] == 0.0 and tr.times[-1] == 2.0
    assert tr.t_start == 2.0 and tr.initial[0] == 1.0
    assert abs(tr.final[0] - math.exp(2.0)) < 1e-7


def test_t_eval_matches_full_run():
    sys = poincare_cartesian(PoincareParams(gamma=0.3))
    te = np.linspace(0, 20, 41)
    a = integrate(sys, [1.0, 0.0], 0.0, 20.0, 1e-10, t_eval=te)
    b = integrate(sys, [1.0, 0.0], 0.0, 20.0, 1e-10)
    assert np.array_equal(a.times, te)
    assert np.max(np.abs(a.states - b(te))) < 1e-7


def test_against_scipy_reference():
    # independent integrator as oracle
    sys = poincare_cartesian(PoincareParams(gamma=0.4))
    ref = solve_ivp(lambda t, x: sys.eval(x, t), (0, 30), [1.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12)
    tr = integrate(sys, [1.0, 0.0], 0.0, 30.0, tol=1e-10)
    assert np.max(np.abs(tr.final - ref.y[:, -1])) < 1e-7


def test_interpolation_hits_stored_states():
    tr = integrate(poincare_cartesian(PoincareParams(gamma=0.2)), [1.0, 0.0], 0.0, 5.0)
    assert np.array_equal(tr(tr.times), tr.states)


def test_dense_output_residual():
    sys = poincare_cartesian(PoincareParams(gamma=0.2))
    tol = 1e-8
    tr = integrate(sys, [1.0, 0.0], 0.0, 10.0, tol)
    mids = 0.5 * (tr.times[1:] + tr.times[:-1])
    res = [np.max(np.abs(tr.derivative(t) - sys.eval(tr(t), t))) for t in mids]
    assert max(res) < 1e3 * tol


def test_sample_flow_vectorised():
    times = np.linspace(0, 2, 11)
    y = sample_flow(lambda y, t: -y, np.array([1.0, 2.0]), 0.0, times, 1e-10)
    assert y.shape == (11, 2)
    assert np.max(np.abs(y - np.exp(-times)[:, None] * [1.0, 2.0])) < 1e-8


def test_trajectory_validation():
    with pytest.raises(DomainError):
        Trajectory([0.0, 0.0], [[1.0], [1.0]], [[0.0], [0.0]])
    tr = Trajectory([0.0, 1.0], [[0.0], [1.0]], [[1.0], [1.0]])
    with pytest.raises(DomainError):
        tr(2.0)
    with pytest.raises(ValueError):
        tr.states[0, 0] = 5.0


@pytest.mark.parametrize("tol", [1e-14, 1e-2, 0.0, 1.0])
def test_tol_bounds(tol):
    with pytest.raises(DomainError):
        integrate(linear([[1.0]]), [1.0], 0.0, 1.0, tol)


def test_step_underflow_reports_last_time():
    blow = SystemSpec(1, lambda x, t: x * x)  # x' = x^2 blows up at t = 1
    with pytest.raises(IntegrationError) as ei:
        integrate(blow, [1.0], 0.0, 2.0)
    assert 0.9 < ei.value.last_time < 1.0 + 1e-6


def test_nan_field():
    bad = SystemSpec(1, lambda x, t: np.array([np.nan]))
    with pytest.raises(NonFiniteError):
        integrate(bad, [1.0], 0.0, 1.0)


def test_diag_exponents():
    res = integrate_with_tangents(linear(np.diag([-1.0, -2.0])), [1.0, 1.0], np.eye(2), 0.0, 100.0, 1.0)
    assert np.allclose(res.exponents, [-1.0, -2.0], atol=1e-3)


def test_rotation_exponents_vanish():
    res = integrate_with_tangents(linear([[0.0, -1.0], [1.0, 0.0]]), [1.0, 0.0], np.eye(2), 0.0, 100.0, 1.0)
    assert np.max(np.abs(res.exponents)) < 1e-3


def test_unforced_poincare_exponents():
    ex = lyapunov_spectrum(poincare_cartesian(PoincareParams()), [1.0, 0.0], 200.0, seed=3)
    assert abs(ex[0]) < 2e-2 and abs(ex[1] + 1.0) < 2e-2


def test_non_orthonormal_frame_rejected():
    with pytest.raises(DomainError):
        integrate_with_tangents(linear(np.eye(2)), [0.0, 0.0], [[1.0, 1.0], [0.0, 1.0]], 0.0, 1.0, 0.5)


def test_jacobian_checks():
    A = np.array([[0.3, -1.2], [2.0, 0.1]])
    assert jacobian_check(linear(A), [0.4, -0.7], 0.0) <= 1e-9
    assert jacobian_check(poincare_cartesian(PoincareParams(gamma=0.3)), [1.0, 0.2], 0.3) <= 1e-6
    neuron = class1_neuron(ClassINeuronParams(mu=0.2))
    x = np.array([math.pi / 3, 0.2])
    fd = fd_jacobian(neuron.eval, x, 0.0)
    assert abs(fd[0, 0] - math.sin(math.pi / 3)) <= 1e-7
    with pytest.raises(DomainError):
        jacobian_check(linear(A), [0.0, 0.0], 0.0, h=1e-2)


def test_fd_fallback_used_without_jacobian():
    sys = SystemSpec(2, lambda x, t: np.array([x[1], -math.sin(x[0])]))
    J = sys.jacobian(np.array([0.5, 0.0]), 0.0)
    assert np.allclose(J, [[0.0, 1.0], [-math.cos(0.5), 0.0]], atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2.0, 2.0), t1=st.floats(0.1, 3.0))
def test_linear_scalar_closed_form(a, t1):
    tr = integrate(linear([[a]]), [1.0], 0.0, t1, tol=1e-10)
    assert abs(tr.final[0] - math.exp(a * t1)) <= 1e-8 * max(1.0, math.exp(a * t1))


@settings(max_examples=15, deadline=None)
@given(x=st.floats(-1.5, 1.5), y=st.floats(-1.5, 1.5), t1=st.floats(0.5, 5.0))
def test_time_reversal(x, y, t1):
    sys = linear([[-0.1, -1.0], [1.0, -0.1]])
    tol = 1e-10
    fwd = propagate(sys.eval, [x, y], 0.0, t1, tol)
    back = propagate(sys.eval, fwd, t1, 0.0, tol)
    assert np.max(np.abs(back - [x, y])) <= 10 * tol * max(1.0, math.hypot(x, y)) * 10


def test_eval_deterministic():
    sys = poincare_cartesian(PoincareParams(gamma=0.3))
    x = np.array([0.7, -0.2])
    assert np.array_equal(sys.eval(x, 1.234), sys.eval(x, 1.234))
