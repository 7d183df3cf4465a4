"""Section crossings and phase locking of chaotic oscillators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, InsufficientDataError
from .models import RosslerParams, rossler
from .ode import SystemSpec, Trajectory, integrate, lyapunov_spectrum, propagate
from .sync import DEFAULT_LOCK_BOUND, PhaseSeries, SyncReport, detect_mn_locking, rotation_number
from .torus import TWO_PI

__all__ = [
    "SectionSpec",
    "CoherenceReport",
    "ROSSLER_SECTION",
    "section_crossings",
    "coherence",
    "chaotic_phase",
    "chaos_locking",
    "rossler_mean_frequency",
]


@dataclass(frozen=True)
class SectionSpec:
    """Hyperplane ``normal . x = offset`` crossed in ``direction``.

    ``positive`` means ``normal . x`` increases through the plane. An optional
    half-space ``half_normal . x > half_offset`` restricts the section.
    """

    normal: tuple[float, ...]
    offset: float = 0.0
    direction: Literal["positive", "negative", "both"] = "positive"
    half_normal: Optional[tuple[float, ...]] = None
    half_offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.ndim != 1 or not np.any(n != 0):
            raise DomainError("section normal must be a nonzero vector")
        if self.direction not in ("positive", "negative", "both"):
            raise DomainError(f"unknown direction {self.direction!r}")
        if self.half_normal is not None and len(self.half_normal) != n.size:
            raise DomainError("half_normal must match the normal dimension")

    def flipped(self) -> "SectionSpec":
        d = {"positive": "negative", "negative": "positive", "both": "both"}[self.direction]
        return SectionSpec(self.normal, self.offset, d, self.half_normal, self.half_offset)


# y = 0 on the x > 0 branch; there y' = x > 0, so crossings are upward
ROSSLER_SECTION = SectionSpec((0.0, 1.0, 0.0), 0.0, "positive", (1.0, 0.0, 0.0), 0.0)


def section_crossings(traj: Trajectory, sec: SectionSpec, time_tol: float = 1e-12):
    """Crossing times (ascending) and states of ``traj`` through ``sec``.

    Sign changes between stored samples are located by Brent's method on
    the Hermite interpolant.
    """
    n = np.asarray(sec.normal, dtype=float)
    if n.size != traj.dim:
        raise DomainError("section dimension does not match the trajectory")
    g = traj.states @ n - sec.offset
    up = (g[:-1] < 0) & (g[1:] >= 0)
    down = (g[:-1] > 0) & (g[1:] <= 0)
    mask = {"positive": up, "negative": down, "both": up | down}[sec.direction]
    times, states = [], []
    for i in np.flatnonzero(mask):
        t0, t1 = traj.times[i], traj.times[i + 1]
        if g[i + 1] == 0:
            tc = t1
        else:
            tc = brentq(lambda s: float(traj(s) @ n) - sec.offset, t0, t1, xtol=time_tol, rtol=4 * np.finfo(float).eps)
        x = traj(tc)
        if sec.half_normal is not None and not float(np.dot(sec.half_normal, x)) > sec.half_offset:
            continue
        times.append(tc)
        states.append(x)
    return np.asarray(times), np.asarray(states).reshape(-1, traj.dim)


@dataclass(frozen=True)
class CoherenceReport:
    c: float
    spread: float
    coherence_index: float
    count: int


def coherence(crossing_times) -> CoherenceReport:
    """Mean return time ``c`` and the spread of return times about it."""
    t = np.asarray(crossing_times, dtype=float)
    iv = np.diff(t)
    if iv.size < 10:
        raise InsufficientDataError(f"need at least 10 return intervals, got {iv.size}")
    if np.any(iv <= 0):
        raise DomainError("crossing times must be strictly increasing")
    c = float(iv.mean())
    sd = float(iv.std(ddof=1))
    return CoherenceReport(c, sd, sd / c, int(iv.size))


def chaotic_phase(crossing_times, t_query):
    """Phase growing by 2 pi per return, linear in time between crossings.

    ``phi(t_k) = 2 pi k`` with ``k`` counted from the first crossing.
    """
    tc = np.asarray(crossing_times, dtype=float)
    if tc.size < 2:
        raise InsufficientDataError("need at least two crossings")
    tq = np.asarray(t_query, dtype=float)
    if np.any(tq < tc[0]) or np.any(tq > tc[-1]):
        raise DomainError("query time outside the crossing span")
    return np.interp(tq, tc, TWO_PI * np.arange(tc.size))


def rossler_mean_frequency(p: RosslerParams = RosslerParams(), horizon: float = 1000.0, transient: float = 100.0,
                           tol: float = 1e-9) -> float:
    """2 pi over the mean return time to the default section."""
    sys = rossler(RosslerParams(p.a, p.b, p.c))
    x = propagate(sys.eval, np.array([1.0, 1.0, 0.0]), 0.0, transient, tol)
    traj = integrate(sys, x, transient, transient + horizon, tol)
    tc, _ = section_crossings(traj, ROSSLER_SECTION)
    return TWO_PI / coherence(tc).c


def chaos_locking(
    sys: SystemSpec,
    forcing_frequency: float,
    horizon: float,
    *,
    x0: Sequence[float] = (1.0, 1.0, 0.0),
    transient: float = 200.0,
    section: SectionSpec = ROSSLER_SECTION,
    tol: float = 1e-9,
    dt: float = 0.1,
    m_max: int = 1,
    n_max: int = 1,
    bound: float = DEFAULT_LOCK_BOUND,
    lyapunov_horizon: float | None = 500.0,
    seed: int = 0,
) -> SyncReport:
    """Compare the section phase of a forced chaotic system with ``Omega t``.

    Locking means bounded ``m phi - n Omega t`` over the window: a proxy for
    collapse onto a lower-dimensional cylinder, not a proof of it. The
    report also carries the largest Lyapunov exponent (positive together with
    locking indicates phase synchronisation of chaos).
    """
    x = propagate(sys.eval, np.asarray(x0, dtype=float), 0.0, transient, tol)
    t0 = transient
    traj = integrate(sys, x, t0, t0 + horizon, tol)
    tc, _ = section_crossings(traj, section)
    if tc.size < 12:
        raise InsufficientDataError("too few section crossings for a phase")
    grid = np.arange(tc[0], tc[-1], dt)
    phi = chaotic_phase(tc, grid)
    ps_osc = PhaseSeries(grid, phi)
    ps_drv = PhaseSeries(grid, forcing_frequency * grid)
    lock = detect_mn_locking(ps_drv, ps_osc, m_max, n_max, bound, discard_fraction=0.0)
    rots = [rotation_number(ps_drv, 0, 0.0), rotation_number(ps_osc, 0, 0.0)]
    lyap = []
    if lyapunov_horizon:
        lyap = [float(v) for v in lyapunov_spectrum(sys, traj.final, lyapunov_horizon, k=1, seed=seed,
                                                    t0=t0 + horizon)]
    note = "locking = bounded phase difference to the forcing (proxy for cylinder collapse)"
    return SyncReport(rotation_numbers=rots, locking=lock, lyapunov=lyap, note=note)
