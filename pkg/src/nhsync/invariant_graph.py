"""Invariant graphs of forced oscillators by graph transform.

Time enters through forcing phases ``phi = phi_0 + w t``, so a candidate
graph ``rho(theta, phi)`` lives on a compact torus. One transform step, for
every grid node ``(theta_0, phi_0)``:

1. flow ``theta' = Theta(theta, rho(theta, phi), phi)`` back over the window;
2. flow ``r' = R(theta, r, phi)`` forward along that phase history, starting
   on the old graph; normal attraction forgets the start up to
   ``exp(-lambda_N window)``;
3. the end value of ``r`` is the new graph value at the node.

The same backward/forward scheme, applied to the slope Riccati equation,
gives ``rho_theta`` without differentiating the graph.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, InsufficientSamplingError, NhsyncError, NonFiniteError
from .models import PhaseChart
from .ode import propagate
from .torus import TWO_PI, TorusGraph

__all__ = [
    "GraphDiagnostics",
    "NHRates",
    "PullbackResult",
    "SlopeBlowupError",
    "graph_transform_step",
    "solve_graph",
    "pullback_graph",
    "slope_field",
    "nh_rates",
    "persistence_threshold",
    "invariance_residual",
    "initial_graph",
    "default_window",
]

log = logging.getLogger(__name__)


class SlopeBlowupError(NhsyncError):
    """Slope equation diverged: the normal/tangential rate ratio is violated."""


@dataclass
class GraphDiagnostics:
    deltas: list[float] = field(default_factory=list)
    contraction_factor: float | None = None
    converged: bool = False
    status: str = "running"
    iterations: int = 0
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "deltas": list(self.deltas),
            "contraction_factor": self.contraction_factor,
            "converged": self.converged,
            "status": self.status,
            "iterations": self.iterations,
            "message": self.message,
        }


@dataclass(frozen=True)
class NHRates:
    """Empirical rates; ``ratio > 1`` means normal contraction dominates.

    ``lambda_N`` and ``lambda_T_max`` are uniform finite-time rates (worst
    case over unit-length windows); the ``*_mean`` fields are the
    corresponding long-time averages.
    """

    lambda_N: float
    lambda_T_max: float
    ratio: float
    samples: int
    lambda_T_inst_max: float = float("nan")
    lambda_N_mean: float = float("nan")
    lambda_T_mean: float = float("nan")


@dataclass(frozen=True)
class PullbackResult:
    graph: TorusGraph
    converged: bool
    empty_fraction: float
    samples: int


def persistence_threshold(alpha: float, a: float) -> float:
    """Forcing amplitude below which tangential rates stay under alpha * a."""
    if not (alpha > 0 and a > 0):
        raise DomainError("alpha and a must be positive")
    return alpha * a * a / 2


def default_window(chart: PhaseChart) -> float:
    """20 / lambda_N with lambda_N estimated on the nominal graph."""
    th = np.linspace(0, TWO_PI, 16, endpoint=False)[None]
    phi = np.zeros((len(chart.forcing_frequencies), 16))
    r = chart.nominal_graph(th, phi)
    d = chart.partials(th, r, phi)
    R_r = d["R_r"]
    lam = -float(np.max(np.linalg.eigvals(np.moveaxis(R_r, -1, 0)).real)) if R_r.size else 1.0
    return 20.0 / max(lam, 1e-3)


def initial_graph(chart: PhaseChart, grid) -> TorusGraph:
    """Unperturbed graph of ``chart`` on ``grid`` (e.g. r = a for Poincare)."""
    n = chart.n_phase

    def fn(pts):
        return chart.nominal_graph(pts[:n], pts[n:])

    return TorusGraph.from_function(fn, grid, n, chart.forcing_frequencies)


def _check_compatible(rho: TorusGraph, chart: PhaseChart) -> None:
    if rho.n_phase != chart.n_phase or rho.p != chart.n_normal:
        raise DomainError("graph and chart disagree on phase/normal dimensions")
    if len(rho.forcing_frequencies) != len(chart.forcing_frequencies) or not np.allclose(
        rho.forcing_frequencies, chart.forcing_frequencies
    ):
        raise DomainError("graph and chart disagree on forcing frequencies")


class _Fibers:
    """Grid nodes arranged as ``(n_phase, *phase_grid, n_fibers)`` arrays.

    Forcing phases then broadcast over the phase axes, and graph values are
    read through a time-shifted evaluator.
    """

    def __init__(self, rho: TorusGraph):
        self.rho = rho
        n = rho.n_phase
        self.n = n
        nf = int(np.prod(rho.grid[n:])) if rho.m > n else 1
        self.shape = rho.grid[:n] + (nf,)
        pts = rho.node_points()
        self.theta0 = pts[:n].reshape((n,) + self.shape)
        k = rho.m - n
        self.phi0 = pts[n:].reshape((k,) + self.shape)[(slice(None),) + (0,) * n][(slice(None),) + (None,) * n]
        self.w = np.asarray(rho.forcing_frequencies, dtype=float).reshape((k,) + (1,) * (n + 1))
        self.N = rho.n_nodes
        self._cache_t = None
        self._cache_ev = None

    def phases(self, t):
        return self.phi0 + self.w * t

    def evaluator(self, t):
        if t != self._cache_t:
            self._cache_ev = self.rho.phase_evaluator(self.w.ravel() * t)
            self._cache_t = t
        return self._cache_ev

    def values(self, t, theta, deriv=None):
        return self.evaluator(t)(theta, deriv)


def _backward_phases(fib: _Fibers, chart: PhaseChart, window: float, tol: float, max_step: float):
    shp = (fib.n,) + fib.shape

    def on_graph(y, t):
        th = y.reshape(shp)
        r = fib.values(t, th)
        chart.check(r)
        return chart.theta_dot(th, r, fib.phases(t)).ravel()

    return propagate(on_graph, fib.theta0.ravel(), 0.0, -window, tol, max_step).reshape(shp)


def graph_transform_step(
    rho: TorusGraph,
    chart: PhaseChart,
    window: float,
    tol: float = 1e-9,
    max_step: float = 0.25,
) -> TorusGraph:
    """One application of the graph transform ``T`` (see module docstring)."""
    _check_compatible(rho, chart)
    if window < 0:
        raise DomainError("window must be non-negative")
    if window == 0:
        return rho
    fib = _Fibers(rho)
    n, p, N = chart.n_phase, chart.n_normal, fib.N
    th_start = _backward_phases(fib, chart, window, tol, max_step)
    r_start = fib.values(-window, th_start)

    def forward(y, t):
        th = y[: n * N].reshape((n,) + fib.shape)
        r = y[n * N:].reshape((p,) + fib.shape)
        ph = fib.phases(t)
        rg = fib.values(t, th)
        chart.check(rg)
        chart.check(r)
        return np.concatenate([chart.theta_dot(th, rg, ph).ravel(), chart.r_dot(th, r, ph).ravel()])

    y0 = np.concatenate([th_start.ravel(), r_start.ravel()])
    y1 = propagate(forward, y0, -window, 0.0, tol, max_step)
    new = y1[n * N:].reshape(rho.values.shape)
    if not np.all(np.isfinite(new)):
        raise NonFiniteError("graph transform produced non-finite values", 0.0)
    return rho.with_values(new)


def _fit_contraction(deltas: list[float]) -> float | None:
    d = np.asarray([x for x in deltas if x > 0])
    if d.size < 2:
        return None
    k = np.arange(d.size)
    slope = np.polyfit(k, np.log(d), 1)[0]
    return float(math.exp(slope))


def solve_graph(
    rho0: TorusGraph,
    chart: PhaseChart,
    window: float | None = None,
    max_iter: int = 20,
    tol: float = 1e-8,
    *,
    int_tol: float | None = None,
    max_step: float = 0.25,
) -> tuple[TorusGraph, GraphDiagnostics]:
    """Iterate the graph transform to a fixed point in the sup norm.

    Returns the last iterate and diagnostics. ``status`` is ``"converged"``,
    ``"max-iter"`` or ``"no-nh-graph-found"`` (deltas failed to decrease over
    5 iterations, or a transform step broke down).
    """
    window = default_window(chart) if window is None else window
    int_tol = min(1e-9, tol / 10) if int_tol is None else int_tol
    diag = GraphDiagnostics()
    rho = rho0
    for it in range(max_iter):
        try:
            new = graph_transform_step(rho, chart, window, int_tol, max_step)
        except NhsyncError as exc:
            diag.status = "no-nh-graph-found"
            diag.message = f"{type(exc).__name__}: {exc}"
            break
        delta = float(np.max(np.abs(new.values - rho.values)))
        diag.deltas.append(delta)
        diag.iterations = it + 1
        log.debug("graph iteration %d: delta=%.3e", it + 1, delta)
        rho = new
        if delta < tol:
            diag.converged = True
            diag.status = "converged"
            break
        recent = diag.deltas[-6:]
        if len(recent) == 6 and all(b >= a for a, b in zip(recent, recent[1:])):
            diag.status = "no-nh-graph-found"
            diag.message = "deltas non-decreasing over 5 iterations"
            break
    else:
        diag.status = "max-iter"
    diag.contraction_factor = _fit_contraction(diag.deltas)
    return rho, diag


def pullback_graph(
    chart: PhaseChart,
    grid,
    window: float,
    ensemble: int = 4,
    tol: float = 1e-9,
    max_step: float = 0.25,
    seed: int | None = None,
    max_empty_fraction: float = 0.2,
) -> PullbackResult:
    """Estimate the invariant graph by pulling an ensemble back from the past.

    For every forcing-phase node ``phi_j`` an ensemble of ``ensemble * n_theta``
    phases, seeded on the nominal graph, starts at forcing phase
    ``phi_j - w window`` and is flowed by the full (theta, r) dynamics for
    ``window``. Endpoints are binned into theta cells (the empty-cell check)
    and the graph value at each node is read off a periodic cubic spline
    through the endpoints of its fiber. Only one oscillator phase is
    supported.
    """
    if chart.n_phase != 1:
        raise DomainError("pullback_graph supports a single oscillator phase")
    grid = tuple(int(g) for g in grid)
    n_theta = grid[0]
    nf = int(np.prod(grid[1:])) if len(grid) > 1 else 1
    K = ensemble * n_theta
    p = chart.n_normal
    w = np.asarray(chart.forcing_frequencies, dtype=float)

    # forcing-phase nodes, one fiber each
    if len(grid) > 1:
        mesh = np.meshgrid(*[TWO_PI * np.arange(g) / g for g in grid[1:]], indexing="ij")
        phi_end = np.stack([m.ravel() for m in mesh])
    else:
        phi_end = np.zeros((0, 1))
    offset = 0.0 if seed is None else np.random.default_rng(seed).uniform(0, 1)
    th_seed = TWO_PI * (np.arange(K) + offset) / K
    th0 = np.tile(th_seed, nf)[None]
    phi_fiber = np.repeat(phi_end, K, axis=1)
    r0 = chart.nominal_graph(th0, phi_fiber - w[:, None] * window)
    N = K * nf

    if window > 0:
        def full(y, t):
            th = y[:N][None]
            r = y[N:].reshape(p, N)
            chart.check(r)
            ph = phi_fiber + w[:, None] * t
            return np.concatenate([chart.theta_dot(th, r, ph).ravel(), chart.r_dot(th, r, ph).ravel()])

        y1 = propagate(full, np.concatenate([th0.ravel(), r0.ravel()]), -window, 0.0, tol, max_step)
        th1 = y1[:N].reshape(nf, K)
        r1 = y1[N:].reshape(p, nf, K)
    else:
        th1 = th0.reshape(nf, K)
        r1 = r0.reshape(p, nf, K)

    th1 = np.mod(th1, TWO_PI)
    h = TWO_PI / n_theta
    cells = np.mod(np.rint(th1 / h).astype(np.int64), n_theta)
    occupied = np.zeros((nf, n_theta), dtype=bool)
    np.put_along_axis(occupied, cells, True, axis=1)
    empty = 1.0 - occupied.mean()
    if empty > max_empty_fraction:
        raise InsufficientSamplingError(f"{empty:.1%} of cells received no ensemble member")

    nodes = TWO_PI * np.arange(n_theta) / n_theta
    vals = np.empty((p, n_theta, nf))
    for j in range(nf):
        order = np.argsort(th1[j])
        x = th1[j, order]
        keep = np.concatenate([[True], np.diff(x) > 1e-12])
        x = x[keep]
        for c in range(p):
            y = r1[c, j, order][keep]
            spl = CubicSpline(np.append(x, x[0] + TWO_PI), np.append(y, y[0]), bc_type="periodic")
            vals[c, :, j] = spl(np.where(nodes < x[0], nodes + TWO_PI, nodes))
    graph = TorusGraph(vals.reshape((p,) + grid), 1, chart.forcing_frequencies)
    return PullbackResult(graph, converged=window > 0, empty_fraction=float(empty), samples=N)


def slope_field(
    rho: TorusGraph,
    chart: PhaseChart,
    window: float | None = None,
    tol: float = 1e-9,
    max_step: float = 0.25,
    blowup: float = 1e6,
) -> np.ndarray:
    """Slope ``rho_theta`` on the grid, shape ``(p, n_phase, *grid)``.

    Integrates ``sigma' = R_r sigma - sigma (Theta_theta + Theta_r sigma) + R_theta``
    forward along on-graph phase trajectories that were first flowed back
    over ``window``.
    """
    _check_compatible(rho, chart)
    window = default_window(chart) if window is None else window
    fib = _Fibers(rho)
    n, p, N = chart.n_phase, chart.n_normal, fib.N
    th_start = _backward_phases(fib, chart, window, tol, max_step)
    sig0 = np.stack([fib.values(-window, th_start, [int(a == b) for a in range(n)]) for b in range(n)], axis=1)
    shp = fib.shape

    def forward(y, t):
        th = y[: n * N].reshape((n,) + shp)
        sig = y[n * N:].reshape((p, n) + shp)
        ph = fib.phases(t)
        rg = fib.values(t, th)
        chart.check(rg)
        d = chart.partials(th, rg, ph)
        tan = d["Theta_theta"] + np.einsum("ij...,jk...->ik...", d["Theta_r"], sig)
        dsig = (np.einsum("ij...,jk...->ik...", d["R_r"], sig) - np.einsum("ij...,jk...->ik...", sig, tan)
                + d["R_theta"])
        return np.concatenate([chart.theta_dot(th, rg, ph).ravel(), dsig.ravel()])

    y0 = np.concatenate([th_start.ravel(), sig0.ravel()])
    try:
        y1 = propagate(forward, y0, -window, 0.0, tol, max_step)
    except NonFiniteError as exc:
        raise SlopeBlowupError(f"slope equation diverged: {exc}") from exc
    sig = y1[n * N:].reshape((p, n) + rho.grid)
    if not np.all(np.isfinite(sig)) or np.max(np.abs(sig)) > blowup:
        raise SlopeBlowupError("slope equation diverged")
    return sig


def _graph_slope(rho: TorusGraph, pts: np.ndarray) -> np.ndarray:
    n = rho.n_phase
    return np.stack([rho.gradient(pts, b) for b in range(n)], axis=1)


def nh_rates(
    rho: TorusGraph,
    chart: PhaseChart,
    sample_count: int = 32,
    horizon: float = 50.0,
    seed: int = 0,
    tol: float = 1e-9,
    max_step: float = 0.25,
) -> NHRates:
    """Empirical normal and tangential rates along on-graph trajectories.

    ``sample_count`` random on-graph points are flowed for ``horizon`` with
    normal (``R_r``) and tangential (``Theta_theta + Theta_r rho_theta``)
    variational frames, QR-renormalised every unit of time. ``lambda_N`` is
    the weakest normal contraction over all windows and samples,
    ``lambda_T_max`` the largest tangential growth or decay magnitude.
    ``lambda_T_inst_max`` is the largest instantaneous tangential rate over
    the grid nodes.
    """
    _check_compatible(rho, chart)
    rng = np.random.default_rng(seed)
    n, p, S = chart.n_phase, chart.n_normal, sample_count
    pts0 = rng.uniform(0, TWO_PI, size=(rho.m, S))
    w = np.asarray(chart.forcing_frequencies, dtype=float)

    def rhs(y, t):
        th = y[: n * S].reshape(n, S)
        PN = y[n * S: n * S + p * p * S].reshape(p, p, S)
        PT = y[n * S + p * p * S:].reshape(n, n, S)
        ph = pts0[n:] + w[:, None] * t
        pts = np.concatenate([th, ph])
        rg = rho(pts)
        chart.check(rg)
        sig = _graph_slope(rho, pts)
        d = chart.partials(th, rg, ph)
        tan = d["Theta_theta"] + np.einsum("ijN,jkN->ikN", d["Theta_r"], sig)
        return np.concatenate([
            chart.theta_dot(th, rg, ph).ravel(),
            np.einsum("ijN,jkN->ikN", d["R_r"], PN).ravel(),
            np.einsum("ijN,jkN->ikN", tan, PT).ravel(),
        ])

    eyeN = np.repeat(np.eye(p)[:, :, None], S, axis=2)
    eyeT = np.repeat(np.eye(n)[:, :, None], S, axis=2)
    # renormalise every unit of time to keep the fundamental matrices bounded
    y = np.concatenate([pts0[:n].ravel(), eyeN.ravel(), eyeT.ravel()])
    logN = np.zeros((p, S))
    logT = np.zeros((n, S))
    worst_N, worst_T = math.inf, 0.0
    t = 0.0
    while t < horizon - 1e-12:
        t1 = min(t + 1.0, horizon)
        y = propagate(rhs, y, t, t1, tol, max_step)
        PN = y[n * S: n * S + p * p * S].reshape(p, p, S)
        PT = y[n * S + p * p * S:].reshape(n, n, S)
        wN = np.empty((p, S))
        wT = np.empty((n, S))
        for s in range(S):
            qn, rn = np.linalg.qr(PN[:, :, s])
            qt, rt = np.linalg.qr(PT[:, :, s])
            wN[:, s] = np.log(np.abs(np.diag(rn)))
            wT[:, s] = np.log(np.abs(np.diag(rt)))
            PN[:, :, s] = qn * np.sign(np.diag(rn))
            PT[:, :, s] = qt * np.sign(np.diag(rt))
        logN += wN
        logT += wT
        worst_N = min(worst_N, float(np.min(-wN)) / (t1 - t))
        worst_T = max(worst_T, float(np.max(np.abs(wT))) / (t1 - t))
        y = np.concatenate([y[: n * S], PN.ravel(), PT.ravel()])
        t = t1
    mean_N = float(np.min(-np.max(logN, axis=0) / horizon))
    mean_T = float(np.max(np.abs(logT)) / horizon)

    nodes = rho.node_points()
    rg = rho.flat_values()
    d = chart.partials(nodes[:n], rg, nodes[n:])
    tan = d["Theta_theta"] + np.einsum("ijN,jkN->ikN", d["Theta_r"], _graph_slope(rho, nodes))
    inst = float(np.max(np.abs(tan)))
    return NHRates(worst_N, worst_T, worst_N / max(worst_T, 1e-12), S, inst, mean_N, mean_T)


def invariance_residual(rho: TorusGraph, chart: PhaseChart, sample_count: int = 256, seed: int = 0) -> float:
    """Max of |R(theta, rho, phi) - (rho_theta Theta + rho_phi w)| at random points."""
    _check_compatible(rho, chart)
    rng = np.random.default_rng(seed)
    n = chart.n_phase
    pts = rng.uniform(0, TWO_PI, size=(rho.m, sample_count))
    th, ph = pts[:n], pts[n:]
    rg = rho(pts)
    lhs = chart.r_dot(th, rg, ph)
    Th = chart.theta_dot(th, rg, ph)
    adv = np.zeros_like(lhs)
    for ax in range(n):
        adv += rho.gradient(pts, ax) * Th[ax]
    for k, wk in enumerate(chart.forcing_frequencies):
        adv += rho.gradient(pts, n + k) * wk
    return float(np.max(np.abs(lhs - adv)))
