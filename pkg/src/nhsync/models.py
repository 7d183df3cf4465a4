"""Concrete oscillator models with analytic jacobians and phase charts.

A *chart* describes dynamics in (phase, normal) coordinates,

    theta' = Theta(theta, r, phi),   r' = R(theta, r, phi),

where ``phi`` are forcing phases advancing at ``forcing_frequencies``.
Arrays are component-major: ``theta`` has shape ``(n_phase, N)``, ``r``
shape ``(n_normal, N)`` and ``phi`` shape ``(n_forcing, N)`` (or anything
broadcastable to it).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ChartEscapeError, DomainError
from .ode import SystemSpec, dp5_steps

__all__ = [
    "TWO_TONE_FREQUENCIES",
    "PoincareParams",
    "ClassINeuronParams",
    "CircuitParams",
    "RosslerParams",
    "CoupledPair",
    "PhaseChart",
    "PoincarePolarChart",
    "LinearSkewChart",
    "AdlerChart",
    "two_tone_forcing",
    "poincare_cartesian",
    "poincare_polar",
    "class1_neuron",
    "class1_period",
    "class1_rest_states",
    "circuit",
    "rossler",
    "coupled_pair",
    "diffusive_pair",
]

TWO_TONE_FREQUENCIES = (2 * math.pi, 4.0)


def two_tone_forcing(t):
    """f(t) = sin 2 pi t + sin 4t."""
    return np.sin(2 * np.pi * t) + np.sin(4.0 * t)


# --------------------------------------------------------------------------
# parameter records


@dataclass(frozen=True)
class PoincareParams:
    alpha: float = 1.0
    a: float = 1.0
    omega: float = 1.0
    gamma: float = 0.0
    forcing: Literal["two-tone", "single", "zero"] = "two-tone"
    Omega: float = 1.0
    q_form: Literal["radial", "smooth"] = "radial"

    def __post_init__(self):
        if not self.alpha > 0 or not self.a > 0:
            raise DomainError("alpha and a must be positive")
        if not self.gamma >= 0:
            raise DomainError("gamma must be non-negative")
        if self.forcing not in ("two-tone", "single", "zero"):
            raise DomainError(f"unknown forcing {self.forcing!r}")
        if self.q_form not in ("radial", "smooth"):
            raise DomainError(f"unknown q_form {self.q_form!r}")

    @property
    def forcing_frequencies(self) -> tuple[float, ...]:
        if self.forcing == "two-tone":
            return TWO_TONE_FREQUENCIES
        if self.forcing == "single":
            return (float(self.Omega),)
        return ()

    def f(self, t):
        if self.forcing == "zero":
            return 0.0 * np.asarray(t, dtype=float)
        return sum(np.sin(w * np.asarray(t, dtype=float)) for w in self.forcing_frequencies)


@dataclass(frozen=True)
class ClassINeuronParams:
    mu: float = 0.0
    drive: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError("mu must be finite")


@dataclass(frozen=True)
class CircuitParams:
    # a is the sweep ("potentiometer") parameter; the rest are placeholders
    a: float = 0.3
    b: float = 1.0
    c: float = 1.0
    e: float = 1.0
    f: float = 1.0
    g1: float = 1.0
    g3: float = 1.0

    def __post_init__(self):
        if min(self.b, self.c, self.e, self.f) <= 0:
            raise DomainError("b, c, e, f must be positive")

    def g(self, z):
        return self.g1 * z + self.g3 * z**3


@dataclass(frozen=True)
class RosslerParams:
    a: float = 0.2
    b: float = 0.2
    c: float = 5.7
    forcing_amplitude: float = 0.0
    forcing_frequency: float = 1.0


@dataclass(frozen=True)
class CoupledPair:
    """Two systems coupled by ``strength * g_i(x1, x2)``.

    ``coupling_jacobian(x1, x2)`` may return the blocks
    ``((dg1/dx1, dg1/dx2), (dg2/dx1, dg2/dx2))``; without it the product
    system falls back to finite differences.
    """

    first: SystemSpec
    second: SystemSpec
    g1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    strength: float = 0.0
    coupling_jacobian: Optional[Callable] = None


# --------------------------------------------------------------------------
# charts


class PhaseChart:
    """Phase/normal description of a (possibly forced) oscillator."""

    n_phase: int = 1
    n_normal: int = 0
    forcing_frequencies: tuple[float, ...] = ()

    def theta_dot(self, theta, r, phi) -> np.ndarray:
        raise NotImplementedError

    def r_dot(self, theta, r, phi) -> np.ndarray:
        return np.zeros((0,) + np.shape(theta)[1:])

    def partials(self, theta, r, phi) -> dict[str, np.ndarray]:
        """``Theta_theta`` (n,n,N), ``Theta_r`` (n,p,N), ``R_theta`` (p,n,N), ``R_r`` (p,p,N)."""
        raise NotImplementedError

    def check(self, r) -> None:
        """Raise ChartEscapeError if ``r`` is outside the chart."""

    def nominal_graph(self, theta, phi) -> np.ndarray:
        """Unperturbed normal coordinate used as default initial graph."""
        return np.zeros((self.n_normal,) + np.shape(theta)[1:])

    def forcing_phases(self, t, phi0=None) -> np.ndarray:
        w = np.asarray(self.forcing_frequencies, dtype=float)[:, None]
        ph = w * np.atleast_1d(np.asarray(t, dtype=float))[None, :]
        if phi0 is not None:
            ph = ph + np.asarray(phi0, dtype=float).reshape(-1, 1)
        return ph

    def system(self, phi0=None, name: str = "") -> SystemSpec:
        """The chart dynamics as a SystemSpec on state ``(theta..., r...)``."""
        n, p = self.n_phase, self.n_normal
        nf = len(self.forcing_frequencies)
        phi_start = np.zeros(nf) if phi0 is None else np.asarray(phi0, dtype=float)
        w = np.asarray(self.forcing_frequencies, dtype=float)

        def rhs(x, t):
            th = x[:n, None]
            r = x[n:, None]
            self.check(r)
            ph = (phi_start + w * t)[:, None]
            return np.concatenate([self.theta_dot(th, r, ph)[:, 0], self.r_dot(th, r, ph)[:, 0]])

        def jac(x, t):
            th = x[:n, None]
            r = x[n:, None]
            ph = (phi_start + w * t)[:, None]
            d = self.partials(th, r, ph)
            J = np.zeros((n + p, n + p))
            J[:n, :n] = d["Theta_theta"][:, :, 0]
            J[:n, n:] = d["Theta_r"][:, :, 0]
            J[n:, :n] = d["R_theta"][:, :, 0]
            J[n:, n:] = d["R_r"][:, :, 0]
            return J

        return SystemSpec(n + p, rhs, jac, tuple(self.forcing_frequencies), name or type(self).__name__, chart=self)


class PoincarePolarChart(PhaseChart):
    """Forced Poincare oscillator in polar coordinates.

    theta' = omega + (gamma/r) f cos(theta),
    r'     = -alpha r (r - a) + gamma f sin(theta),

    with f the sum of sines of the forcing phases. The sign of the
    cos-term is the one obtained by transforming the Cartesian equations.
    """

    n_phase = 1
    n_normal = 1

    def __init__(self, params: PoincareParams):
        self.params = params
        self.forcing_frequencies = params.forcing_frequencies

    def _f(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape[0] == 0:
            return 0.0
        return np.sum(np.sin(phi), axis=0)

    def check(self, r):
        if np.any(~(np.asarray(r) > 0)):
            raise ChartEscapeError("polar chart requires r > 0")

    def theta_dot(self, theta, r, phi):
        p = self.params
        return p.omega + (p.gamma / r) * self._f(phi) * np.cos(theta)

    def r_dot(self, theta, r, phi):
        p = self.params
        rr = r[0]
        if p.q_form == "radial":
            radial = -p.alpha * rr * (rr - p.a)
        else:
            radial = -p.alpha * rr * (rr * rr - p.a * p.a)
        return (radial + p.gamma * self._f(phi) * np.sin(theta[0]))[None, ...]

    def partials(self, theta, r, phi):
        p = self.params
        th, rr = theta[0], r[0]
        f = self._f(phi)
        R_r = -p.alpha * (2 * rr - p.a) if p.q_form == "radial" else -p.alpha * (3 * rr * rr - p.a * p.a)
        one = np.ones(np.broadcast_shapes(np.shape(th), np.shape(rr), np.shape(f)))
        return {
            "Theta_theta": (-(p.gamma / rr) * f * np.sin(th) * one)[None, None],
            "Theta_r": (-(p.gamma / rr**2) * f * np.cos(th) * one)[None, None],
            "R_theta": (p.gamma * f * np.cos(th) * one)[None, None],
            "R_r": (R_r * one)[None, None],
        }

    def nominal_graph(self, theta, phi):
        return np.full((1,) + np.shape(theta)[1:], self.params.a)


class LinearSkewChart(PhaseChart):
    """theta' = 1, r' = -lam (r - c sin theta); invariant graph known in closed form."""

    n_phase = 1
    n_normal = 1
    forcing_frequencies = ()

    def __init__(self, lam: float = 1.0, c: float = 1.0):
        self.lam, self.c = lam, c

    def theta_dot(self, theta, r, phi):
        return np.ones_like(theta) + 0 * r[:1]

    def r_dot(self, theta, r, phi):
        return -self.lam * (r - self.c * np.sin(theta))

    def partials(self, theta, r, phi):
        one = np.ones(np.broadcast_shapes(np.shape(theta[0]), np.shape(r[0])))
        return {
            "Theta_theta": (0 * one)[None, None],
            "Theta_r": (0 * one)[None, None],
            "R_theta": (self.lam * self.c * np.cos(theta[0]) * one)[None, None],
            "R_r": (-self.lam * one)[None, None],
        }

    def exact_graph(self, theta):
        lam, c = self.lam, self.c
        A = lam**2 * c / (1 + lam**2)
        B = -lam * c / (1 + lam**2)
        return A * np.sin(theta) + B * np.cos(theta)

    def exact_slope(self, theta):
        lam, c = self.lam, self.c
        A = lam**2 * c / (1 + lam**2)
        B = -lam * c / (1 + lam**2)
        return A * np.cos(theta) - B * np.sin(theta)


class AdlerChart(PhaseChart):
    """Phase-only model theta' = delta - k sin(h theta) (relative phase to a drive)."""

    n_phase = 1
    n_normal = 0
    forcing_frequencies = ()

    def __init__(self, delta: float, k: float, harmonic: int = 1):
        self.delta, self.k, self.harmonic = delta, k, harmonic

    def theta_dot(self, theta, r, phi):
        return self.delta - self.k * np.sin(self.harmonic * theta)

    def partials(self, theta, r, phi):
        n = np.shape(theta)[1:]
        return {
            "Theta_theta": (-self.k * self.harmonic * np.cos(self.harmonic * theta[0]))[None, None],
            "Theta_r": np.zeros((1, 0) + n),
            "R_theta": np.zeros((0, 1) + n),
            "R_r": np.zeros((0, 0) + n),
        }


# --------------------------------------------------------------------------
# systems


def poincare_cartesian(p: PoincareParams) -> SystemSpec:
    """x' = -q x - omega y,  y' = omega x - q y + gamma f(t)."""
    alpha, a, omega, gamma = p.alpha, p.a, p.omega, p.gamma
    smooth = p.q_form == "smooth"

    def rhs(x, t):
        X, Y = x
        r2 = X * X + Y * Y
        q = alpha * (r2 - a * a) if smooth else alpha * (math.sqrt(r2) - a)
        return np.array([-q * X - omega * Y, omega * X - q * Y + gamma * p.f(t)])

    def jac(x, t):
        X, Y = x
        r2 = X * X + Y * Y
        if smooth:
            q = alpha * (r2 - a * a)
            qx, qy = 2 * alpha * X, 2 * alpha * Y
        else:
            r = math.sqrt(r2)
            q = alpha * (r - a)
            # q is not differentiable at the origin; use the radial limit 0
            qx, qy = (alpha * X / r, alpha * Y / r) if r > 0 else (0.0, 0.0)
        return np.array(
            [[-q - X * qx, -X * qy - omega], [omega - Y * qx, -q - Y * qy]]
        )

    def nonsmooth(x):
        return (not smooth) and float(x[0]) == 0.0 and float(x[1]) == 0.0

    return SystemSpec(2, rhs, jac, p.forcing_frequencies, "poincare_cartesian", PoincarePolarChart(p), nonsmooth,
                      meta={"params": p})


def poincare_polar(p: PoincareParams) -> SystemSpec:
    """State (theta, r); raises ChartEscapeError (a DomainError cousin) for r <= 0."""
    spec = PoincarePolarChart(p).system(name="poincare_polar")
    return spec


def class1_neuron(p: ClassINeuronParams) -> SystemSpec:
    """theta' = mu + 1 - cos(theta), mu' = drive(t) (0 by default)."""
    drive = p.drive

    def rhs(x, t):
        th, mu = x
        return np.array([mu + 1.0 - math.cos(th), 0.0 if drive is None else float(drive(t))])

    def jac(x, t):
        return np.array([[math.sin(x[0]), 1.0], [0.0, 0.0]])

    return SystemSpec(2, rhs, jac, (), "class1_neuron", meta={"params": p})


def class1_period(mu: float, tol: float = 1e-12) -> float:
    """Time for theta to advance from 0 to 2 pi, found by integrating the ODE."""
    if mu <= 0:
        raise DomainError("period is finite only for mu > 0")
    sys = class1_neuron(ClassINeuronParams(mu))
    target = 2 * math.pi
    prev = None
    for t, y, f in dp5_steps(sys.eval, 0.0, np.array([0.0, mu]), math.inf, tol):
        if prev is not None and y[0] >= target:
            tp, yp, fp = prev
            h = t - tp
            # root of the cubic Hermite interpolant of theta(t) - 2 pi
            def g(s):
                s2, s3 = s * s, s * s * s
                return ((2 * s3 - 3 * s2 + 1) * yp[0] + (s3 - 2 * s2 + s) * h * fp[0]
                        + (-2 * s3 + 3 * s2) * y[0] + (s3 - s2) * h * f[0] - target)

            return tp + h * brentq(g, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        prev = (t, y, f)
    raise AssertionError("unreachable")


def class1_rest_states(mu: float) -> list[tuple[float, str]]:
    """Equilibria of theta' = mu + 1 - cos(theta) for -2 <= mu <= 0, with stability."""
    if mu > 0 or mu < -2:
        return []
    th = math.acos(1.0 + mu)
    if th == 0.0:
        return [(0.0, "saddle-node")]
    # d/dtheta (mu + 1 - cos) = sin(theta): negative slope is stable
    return [(-th, "stable"), (th, "unstable")]


def circuit(p: CircuitParams) -> SystemSpec:
    """x' = a x - b y, y' = c x - e z, z' = -f y - g(z), g(z) = g1 z + g3 z^3."""

    def rhs(x, t):
        X, Y, Z = x
        return np.array([p.a * X - p.b * Y, p.c * X - p.e * Z, -p.f * Y - p.g(Z)])

    def jac(x, t):
        Z = x[2]
        return np.array([[p.a, -p.b, 0.0], [p.c, 0.0, -p.e], [0.0, -p.f, -(p.g1 + 3 * p.g3 * Z * Z)]])

    return SystemSpec(3, rhs, jac, (), "circuit", meta={"params": p})


def rossler(p: RosslerParams) -> SystemSpec:
    """x' = -y - z + E cos(W t), y' = x + a y, z' = b + z (x - c)."""
    E, W = p.forcing_amplitude, p.forcing_frequency

    def rhs(x, t):
        X, Y, Z = x
        return np.array([-Y - Z + E * math.cos(W * t), X + p.a * Y, p.b + Z * (X - p.c)])

    def jac(x, t):
        X, Y, Z = x
        return np.array([[0.0, -1.0, -1.0], [1.0, p.a, 0.0], [Z, 0.0, X - p.c]])

    freqs = (W,) if E != 0 else ()
    return SystemSpec(3, rhs, jac, freqs, "rossler", meta={"params": p})


def coupled_pair(cp: CoupledPair) -> SystemSpec:
    """Product system x_i' = v_i(x_i) + strength * g_i(x_1, x_2)."""
    s1, s2, k = cp.first, cp.second, cp.strength
    n1, n2 = s1.dim_state, s2.dim_state

    def rhs(x, t):
        x1, x2 = x[:n1], x[n1:]
        v1 = s1.eval(x1, t)
        v2 = s2.eval(x2, t)
        if k != 0.0:
            v1 = v1 + k * np.asarray(cp.g1(x1, x2), dtype=float)
            v2 = v2 + k * np.asarray(cp.g2(x1, x2), dtype=float)
        return np.concatenate([v1, v2])

    jac = None
    if cp.coupling_jacobian is not None or k == 0.0:

        def jac(x, t):
            x1, x2 = x[:n1], x[n1:]
            J = np.zeros((n1 + n2, n1 + n2))
            J[:n1, :n1] = s1.jacobian(x1, t)
            J[n1:, n1:] = s2.jacobian(x2, t)
            if k != 0.0:
                (a11, a12), (a21, a22) = cp.coupling_jacobian(x1, x2)
                J[:n1, :n1] += k * np.asarray(a11)
                J[:n1, n1:] += k * np.asarray(a12)
                J[n1:, :n1] += k * np.asarray(a21)
                J[n1:, n1:] += k * np.asarray(a22)
            return J

    freqs = tuple(sorted(set(s1.forcing_frequencies) | set(s2.forcing_frequencies)))
    return SystemSpec(n1 + n2, rhs, jac, freqs, f"coupled({s1.name},{s2.name})")


def diffusive_pair(first: SystemSpec, second: SystemSpec, strength: float) -> CoupledPair:
    """g_1 = x_2 - x_1, g_2 = x_1 - x_2 (equal dimensions)."""
    if first.dim_state != second.dim_state:
        raise DomainError("diffusive coupling needs equal state dimensions")
    n = first.dim_state
    eye = np.eye(n)
    return CoupledPair(
        first,
        second,
        lambda x1, x2: x2 - x1,
        lambda x1, x2: x1 - x2,
        strength,
        lambda x1, x2: ((-eye, eye), (eye, -eye)),
    )
