from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nhsync.chaos import (
    ROSSLER_SECTION,
    SectionSpec,
    chaos_locking,
    chaotic_phase,
    coherence,
    rossler_mean_frequency,
    section_crossings,
)
from nhsync.errors import DomainError, InsufficientDataError
from nhsync.models import PoincareParams, RosslerParams, poincare_cartesian, rossler
from nhsync.ode import SystemSpec, integrate, propagate
from nhsync.torus import TWO_PI

OMEGA = 1.3
ROT = SystemSpec(2, lambda x, t: np.array([-OMEGA * x[1], OMEGA * x[0]]))
# section x = 0 crossed with x decreasing, i.e. y > 0 half
X_SECTION = SectionSpec((1.0, 0.0), 0.0, "negative")


def test_section_spec_validation():
    with pytest.raises(DomainError):
        SectionSpec((0.0, 0.0))
    with pytest.raises(DomainError):
        SectionSpec((1.0, 0.0), direction="up")
    with pytest.raises(DomainError):
        SectionSpec((1.0, 0.0), half_normal=(1.0, 0.0, 0.0))
    assert ROSSLER_SECTION.flipped().direction == "negative"


def test_rotation_crossings_exact_period():
    tr = integrate(ROT, [1.0, 0.0], 0.0, 50.0, 1e-11)
    tc, xs = section_crossings(tr, X_SECTION)
    # x = cos(1.3 t) hits zero going down at t = (pi/2 + 2 pi k)/1.3
    expect = (math.pi / 2 + TWO_PI * np.arange(tc.size)) / OMEGA
    assert np.max(np.abs(tc - expect)) < 1e-9
    assert np.all(xs[:, 1] > 0)


def test_unforced_poincare_return_times():
    sys = poincare_cartesian(PoincareParams(omega=0.8, forcing="zero"))
    tr = integrate(sys, [1.0, 0.0], 0.0, 100.0, 1e-10)
    tc, _ = section_crossings(tr, SectionSpec((0.0, 1.0), 0.0, "positive", (1.0, 0.0)))
    assert np.max(np.abs(np.diff(tc) - TWO_PI / 0.8)) < 1e-6


def test_no_crossings_is_empty():
    tr = integrate(SystemSpec(2, lambda x, t: np.array([0.0, 1.0])), [1.0, 0.0], 0.0, 5.0)
    tc, xs = section_crossings(tr, X_SECTION)
    assert tc.size == 0 and xs.shape == (0, 2)


def test_reversed_trajectory_same_crossings():
    # time-reversed flow traverses the same orbit backwards: s = 40 - t
    fwd = integrate(ROT, [1.0, 0.0], 0.0, 40.0, 1e-11)
    rev = SystemSpec(2, lambda x, t: -ROT.eval(x, t))
    bwd = integrate(rev, fwd.final, 0.0, 40.0, 1e-11)
    a, _ = section_crossings(fwd, X_SECTION)
    b, _ = section_crossings(bwd, X_SECTION.flipped())
    assert a.size == b.size
    assert np.max(np.abs(np.sort(a) - np.sort(40.0 - b))) < 1e-8


def test_rossler_crossings_and_coherence():
    sys = rossler(RosslerParams())
    x = propagate(sys.eval, np.array([1.0, 1.0, 0.0]), 0.0, 100.0, 1e-9)
    tr = integrate(sys, x, 100.0, 1100.0, 1e-9)
    tc, xs = section_crossings(tr, ROSSLER_SECTION)
    assert tc.size >= 100
    assert np.all(xs[:, 0] > 0) and np.max(np.abs(xs[:, 1])) < 1e-8
    assert coherence(tc).coherence_index < 0.1


def test_coherence_periodic_and_uniform():
    rep = coherence(2.5 * np.arange(20))
    assert rep.coherence_index == 0.0 and rep.c == 2.5 and rep.count == 19
    rng = np.random.default_rng(0)
    t = np.concatenate([[0.0], np.cumsum(rng.uniform(1, 2, 5000))])
    expected = (1 / math.sqrt(12)) / 1.5
    assert abs(expected - 0.19245) < 1e-4
    assert abs(coherence(t).coherence_index - expected) < 0.03


def test_coherence_errors():
    with pytest.raises(InsufficientDataError):
        coherence(np.arange(10.0))
    with pytest.raises(DomainError):
        coherence(np.r_[np.arange(12.0), 5.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=10, max_size=40), st.floats(0.01, 100.0))
def test_property_coherence_scale_invariant(iv, s):
    t = np.concatenate([[0.0], np.cumsum(iv)])
    a, b = coherence(t), coherence(s * t)
    assert abs(a.coherence_index - b.coherence_index) <= 1e-9 * (1 + a.coherence_index)
    assert math.isclose(b.c, s * a.c, rel_tol=1e-9)


def test_chaotic_phase_definition():
    tc = np.array([0.0, 1.0, 3.0, 3.5])
    assert np.array_equal(chaotic_phase(tc, tc), TWO_PI * np.arange(4))
    mid = chaotic_phase(tc, (tc[:-1] + tc[1:]) / 2)
    assert np.allclose(mid / math.pi, [1, 3, 5])
    with pytest.raises(DomainError):
        chaotic_phase(tc, 4.0)
    with pytest.raises(InsufficientDataError):
        chaotic_phase(tc[:1], 0.0)


def test_chaotic_phase_periodic_linear():
    T = 1.7
    tc = 0.3 + T * np.arange(30)
    q = np.linspace(tc[0], tc[-1], 500)
    assert np.allclose(chaotic_phase(tc, q), TWO_PI * (q - 0.3) / T, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 5.0), min_size=2, max_size=30))
def test_property_chaotic_phase_monotone(iv):
    tc = np.concatenate([[0.0], np.cumsum(iv)])
    q = np.linspace(0, tc[-1], 400)
    ph = chaotic_phase(tc, q)
    assert np.all(np.diff(ph) > 0)
    # continuity: no jumps beyond the steepest slope times the grid step
    assert np.max(np.diff(ph)) <= TWO_PI / min(iv) * (q[1] - q[0]) * (1 + 1e-9)


@pytest.fixture(scope="module")
def w0():
    return rossler_mean_frequency()


def test_rossler_mean_frequency(w0):
    assert 1.0 < w0 < 1.15


def _forced(E, Omega):
    return rossler(RosslerParams(forcing_amplitude=E, forcing_frequency=Omega))


def test_chaos_locking_unforced_not_locked():
    rep = chaos_locking(_forced(0.0, 1.09), 1.09, 2000.0, lyapunov_horizon=None)
    assert rep.locking is None


def test_chaos_locking_forced_locks_with_positive_exponent():
    rep = chaos_locking(_forced(0.3, 1.09), 1.09, 2000.0, lyapunov_horizon=500.0)
    assert rep.locking is not None and (rep.locking.m, rep.locking.n) == (1, 1)
    assert rep.lyapunov[0] > 0.01
    assert abs(rep.rotation_numbers[1][0] - 1.09 / TWO_PI) < 1e-3


def test_chaos_locking_detuned_not_locked():
    rep = chaos_locking(_forced(0.3, 2.18), 2.18, 2000.0, lyapunov_horizon=None)
    assert rep.locking is None
