"""Rotation numbers, m:n locking, phase collapse and Arnold-tongue scans."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import DomainError, InsufficientDataError, NhsyncError, PreconditionError
from .models import PhaseChart
from .ode import SystemSpec, integrate_with_tangents, propagate, sample_flow
from .torus import TWO_PI, TorusGraph

__all__ = [
    "PhaseSeries",
    "Locking",
    "SyncReport",
    "CollapseResult",
    "AttractingResult",
    "TongueScan",
    "AdlerFamily",
    "PhasePairFamily",
    "ForcedPoincareFamily",
    "rotation_number",
    "detect_mn_locking",
    "phase_collapse",
    "arnold_tongue_scan",
    "attracting_trajectory",
    "DEFAULT_LOCK_BOUND",
]

DEFAULT_LOCK_BOUND = 0.45 * TWO_PI


@dataclass(frozen=True)
class PhaseSeries:
    """Unwrapped phases sampled on a common time grid.

    ``phases`` has shape ``(k, len(times))``; consecutive samples of each
    component differ by less than pi.
    """

    times: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        ph = np.asarray(self.phases, dtype=float)
        if ph.ndim == 1:
            ph = ph[None]
        if t.ndim != 1 or ph.ndim != 2 or ph.shape[1] != t.size:
            raise DomainError("phases must have shape (k, len(times))")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise DomainError("times must be strictly increasing")
        if t.size > 1 and np.any(np.abs(np.diff(ph, axis=1)) >= math.pi):
            raise DomainError("phase jumps of pi or more: sample finer or unwrap first")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def from_wrapped(cls, times, phases) -> "PhaseSeries":
        """Unwrap by nearest-branch continuation (jumps larger than pi are folded)."""
        ph = np.atleast_2d(np.asarray(phases, dtype=float))
        return cls(np.asarray(times, dtype=float), np.unwrap(ph, axis=1))

    @property
    def n_components(self) -> int:
        return self.phases.shape[0]

    def component(self, i: int) -> np.ndarray:
        return self.phases[i]

    def stack(self, other: "PhaseSeries") -> "PhaseSeries":
        if other.times.shape != self.times.shape or not np.array_equal(other.times, self.times):
            raise DomainError("series must share the time grid")
        return PhaseSeries(self.times, np.vstack([self.phases, other.phases]))


@dataclass(frozen=True)
class Locking:
    m: int
    n: int
    residual: float


@dataclass
class SyncReport:
    rotation_numbers: list[tuple[float, float]] = field(default_factory=list)
    locking: Optional[Locking] = None
    cluster_count: Optional[int] = None
    lyapunov: list[float] = field(default_factory=list)
    note: str = ""

    @property
    def locked(self) -> bool:
        return self.locking is not None


def _tail(ps: PhaseSeries, discard_fraction: float):
    if not 0 <= discard_fraction < 0.5:
        raise DomainError("discard_fraction must lie in [0, 0.5)")
    t = ps.times
    start = t[0] + discard_fraction * (t[-1] - t[0])
    i0 = int(np.searchsorted(t, start, side="left"))
    return i0


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def rotation_number(
    ps: PhaseSeries,
    component: int = 0,
    discard_fraction: float = 0.2,
    *,
    min_samples: int = 20,
    expected_frequency: float | None = None,
    min_cycles: float = 50.0,
) -> tuple[float, float]:
    """Mean cycles per unit time of one component and a split-half error estimate.

    The rate is the least-squares slope of the unwrapped phase over the
    post-transient window, divided by 2 pi. The error estimate is the
    difference between the slopes fitted on the two halves of that window.
    If ``expected_frequency`` (rad per unit time) is given, the window must
    cover at least ``min_cycles`` expected cycles.
    """
    i0 = _tail(ps, discard_fraction)
    t = ps.times[i0:]
    y = ps.phases[component, i0:]
    if t.size < max(min_samples, 4):
        raise InsufficientDataError(f"only {t.size} samples after discarding the transient")
    if expected_frequency is not None and abs(expected_frequency) * (t[-1] - t[0]) / TWO_PI < min_cycles:
        raise InsufficientDataError("series spans fewer than the required number of expected cycles")
    rho = _slope(t, y) / TWO_PI
    h = t.size // 2
    err = abs(_slope(t[:h], y[:h]) - _slope(t[h:], y[h:])) / TWO_PI
    return rho, err


def _coprime_pairs(m_max: int, n_max: int):
    for m in range(1, m_max + 1):
        for n in range(1, n_max + 1):
            if math.gcd(m, n) == 1:
                yield m, n


def detect_mn_locking(
    ps1: PhaseSeries,
    ps2: PhaseSeries,
    m_max: int = 12,
    n_max: int = 12,
    bound: float = DEFAULT_LOCK_BOUND,
    discard_fraction: float = 0.2,
    component1: int = 0,
    component2: int = 0,
) -> Optional[Locking]:
    """Coprime ``(m, n)`` keeping ``m theta2 - n theta1`` bounded, if any.

    Among coprime pairs up to ``(m_max, n_max)`` the one with the smallest
    variation (max - min) of ``m theta2 - n theta1`` over the post-transient
    window is selected, ties going to the smaller ``m + n``. It is reported
    when that variation is below ``bound``; the residual is half the
    variation, i.e. ``sup |m theta2 - n theta1 - c|`` for the best constant.
    """
    if not (1 <= m_max <= 12 and 1 <= n_max <= 12):
        raise DomainError("m_max and n_max must lie in [1, 12]")
    if ps1.times.shape != ps2.times.shape or not np.allclose(ps1.times, ps2.times, rtol=0, atol=1e-12):
        raise DomainError("phase series must share a time grid")
    i0 = _tail(ps1, discard_fraction)
    th1 = ps1.phases[component1, i0:]
    th2 = ps2.phases[component2, i0:]
    if th1.size < 2:
        raise InsufficientDataError("too few samples for a locking test")
    best = None
    for m, n in _coprime_pairs(m_max, n_max):
        d = m * th2 - n * th1
        var = float(d.max() - d.min())
        key = (var, m + n)
        if best is None or key < best[0]:
            best = (key, m, n)
    (var, _), m, n = best
    if var < bound:
        return Locking(m, n, var / 2)
    return None


# --------------------------------------------------------------------------
# phase collapse on an invariant cylinder


@dataclass(frozen=True)
class CollapseResult:
    cluster_count: int
    cluster_phases: np.ndarray
    cluster_sizes: np.ndarray
    final_phases: np.ndarray


def _circular_clusters(phases: np.ndarray, gap: float, min_size: int):
    x = np.sort(np.mod(phases, TWO_PI))
    K = x.size
    gaps = np.diff(np.append(x, x[0] + TWO_PI))
    breaks = np.flatnonzero(gaps > gap)
    if breaks.size == 0:
        groups = [x]
    else:
        # rotate so the first group starts right after a break
        start = (breaks[-1] + 1) % K
        xr = np.roll(x, -start)
        xr = np.where(np.arange(K) >= K - start, xr + TWO_PI, xr) if start else xr
        cut = np.flatnonzero(np.diff(xr) > gap) + 1
        groups = np.split(xr, cut)
    centers, sizes = [], []
    for g in groups:
        if g.size >= min_size:
            centers.append(float(np.mod(np.angle(np.mean(np.exp(1j * g))), TWO_PI)))
            sizes.append(g.size)
    order = np.argsort(centers)
    return np.asarray(centers)[order], np.asarray(sizes, dtype=int)[order]


def phase_collapse(
    chart: PhaseChart,
    graph: TorusGraph | None,
    fiber: tuple[Sequence[float], float] = ((), 0.0),
    K: int = 64,
    horizon: float = 200.0,
    *,
    offset: float = 0.0,
    gap: float = 1e-3,
    min_fraction: float = 0.05,
    tol: float = 1e-9,
    max_step: float = 0.25,
) -> CollapseResult:
    """Flow a ring of ``K`` phases on one fiber of the invariant cylinder.

    ``fiber = (phi0, t0)`` fixes the forcing phases at the start time. The
    ring, rotated by ``offset``, is flowed by the on-graph phase dynamics for
    ``horizon``. Final phases closer than ``gap`` are grouped, and groups of
    at least ``max(2, min_fraction K)`` members count as attracting clusters;
    a count of 0 means the ring did not collapse.
    """
    if K < 32:
        raise DomainError("K must be at least 32")
    if gap * 10 > TWO_PI / K:
        raise DomainError("gap too large for the ring spacing")
    n, p = chart.n_phase, chart.n_normal
    if n != 1:
        raise DomainError("phase_collapse supports a single oscillator phase")
    if p > 0 and graph is None:
        raise PreconditionError("charts with normal coordinates need an invariant graph")
    phi0, t0 = fiber
    w = np.asarray(chart.forcing_frequencies, dtype=float)
    phi0 = np.zeros(w.size) if len(phi0) == 0 else np.asarray(phi0, dtype=float)
    if phi0.shape != w.shape:
        raise DomainError("fiber phases do not match the chart forcing")
    th0 = offset + TWO_PI * np.arange(K) / K

    def rhs(y, t):
        th = y[None]
        ph = (phi0 + w * (t - t0))[:, None] * np.ones((1, K))
        if p:
            r = graph(np.concatenate([th, ph]))
            chart.check(r)
        else:
            r = np.zeros((0, K))
        return chart.theta_dot(th, r, ph)[0]

    th1 = propagate(rhs, th0, t0, t0 + horizon, tol, max_step)
    centers, sizes = _circular_clusters(th1, gap, max(2, int(math.ceil(min_fraction * K))))
    return CollapseResult(len(centers), centers, sizes, th1)


# --------------------------------------------------------------------------
# Arnold tongues


class TongueFamily(Protocol):
    """A two-parameter family that can simulate many parameter points at once."""

    def simulate(self, delta: np.ndarray, k: np.ndarray, times: np.ndarray, tol: float) -> np.ndarray:
        """Phases of shape ``(2, len(times), N)``: reference phase and oscillator phase."""


@dataclass(frozen=True)
class AdlerFamily:
    """Relative phase ``psi' = delta - k sin(psi)`` against a unit-rate drive."""

    drive_frequency: float = 1.0
    psi0: float = 0.0

    def simulate(self, delta, k, times, tol):
        delta = np.asarray(delta, dtype=float)
        k = np.asarray(k, dtype=float)

        def rhs(y, t):
            return delta - k * np.sin(y)

        psi = sample_flow(rhs, np.full(delta.shape, self.psi0), 0.0, times, tol, max_step=0.5)
        drive = self.drive_frequency * times[:, None] * np.ones_like(psi)
        return np.stack([drive, drive + psi])


@dataclass(frozen=True)
class PhasePairFamily:
    """Two phase oscillators with frequencies ``omega -/+ delta/2`` and coupling
    ``k sin(q theta_j - p theta_i)`` (harmonics ``(p, q)`` allow m:n resonances)."""

    omega: float = 1.0
    harmonics: tuple[int, int] = (1, 1)

    def simulate(self, delta, k, times, tol):
        delta = np.asarray(delta, dtype=float)
        k = np.asarray(k, dtype=float)
        p, q = self.harmonics
        w1 = self.omega - delta / 2
        w2 = self.omega + delta / 2
        N = delta.size

        def rhs(y, t):
            a, b = y[:N], y[N:]
            s = np.sin(q * b - p * a)
            return np.concatenate([w1 + k * s, w2 - k * s])

        y = sample_flow(rhs, np.zeros(2 * N), 0.0, times, tol, max_step=0.5)
        return np.stack([y[:, :N], y[:, N:]])


@dataclass(frozen=True)
class ForcedPoincareFamily:
    """Poincare oscillator (Cartesian) with ``omega = Omega + delta`` forced by ``k sin(Omega t)``."""

    Omega: float = 1.0
    alpha: float = 1.0
    a: float = 1.0

    def simulate(self, delta, k, times, tol):
        delta = np.asarray(delta, dtype=float)
        k = np.asarray(k, dtype=float)
        omega = self.Omega + delta
        N = delta.size

        def rhs(y, t):
            x, v = y[:N], y[N:]
            q = self.alpha * (np.sqrt(x * x + v * v) - self.a)
            return np.concatenate([-q * x - omega * v, omega * x - q * v + k * np.sin(self.Omega * t)])

        y0 = np.concatenate([np.full(N, self.a), np.zeros(N)])
        y = sample_flow(rhs, y0, 0.0, times, tol, max_step=0.25)
        th = np.unwrap(np.arctan2(y[:, N:], y[:, :N]), axis=0)
        drive = self.Omega * times[:, None] * np.ones_like(th)
        return np.stack([drive, th])


@dataclass
class TongueScan:
    deltas: np.ndarray
    ks: np.ndarray
    reports: list[list[SyncReport]]
    errors: dict = field(default_factory=dict)

    def _grid(self, fn) -> np.ndarray:
        return np.array([[fn(r) for r in row] for row in self.reports], dtype=float)

    @property
    def locked(self) -> np.ndarray:
        """Boolean array indexed ``[k, delta]``: any m:n locking."""
        return self._grid(lambda r: r.locking is not None).astype(bool)

    def locked_ratio(self, m: int, n: int) -> np.ndarray:
        return self._grid(lambda r: r.locking is not None and (r.locking.m, r.locking.n) == (m, n)).astype(bool)

    @property
    def relative_rotation(self) -> np.ndarray:
        """Rotation number of oscillator phase minus reference phase, ``[k, delta]``."""
        return self._grid(lambda r: r.rotation_numbers[2][0] if len(r.rotation_numbers) > 2 else math.nan)

    def rows(self):
        """CSV rows ``(delta, k, m, n, residual, rho_ref, rho_osc, rho_rel)``."""
        for i, kk in enumerate(self.ks):
            for j, dd in enumerate(self.deltas):
                r = self.reports[i][j]
                rot = [x[0] for x in r.rotation_numbers] + [math.nan] * (3 - len(r.rotation_numbers))
                if r.locking is None:
                    m = n = 0
                    res = math.nan
                else:
                    m, n, res = r.locking.m, r.locking.n, r.locking.residual
                yield (float(dd), float(kk), m, n, res, *rot[:3])


def _scan_row(family, deltas, kval, times, tol, discard, m_max, n_max, bound):
    try:
        ph = family.simulate(deltas, np.full(deltas.shape, kval), times, tol)
    except NhsyncError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return [SyncReport(note=msg) for _ in deltas], msg
    out = []
    for j in range(deltas.size):
        ref = PhaseSeries(times, ph[0, :, j])
        osc = PhaseSeries(times, ph[1, :, j])
        rel = PhaseSeries(times, ph[1, :, j] - ph[0, :, j])
        rots = [rotation_number(s, 0, discard) for s in (ref, osc, rel)]
        lock = detect_mn_locking(ref, osc, m_max, n_max, bound, discard)
        out.append(SyncReport(rotation_numbers=rots, locking=lock))
    return out, None


def arnold_tongue_scan(
    family: TongueFamily,
    delta_range: tuple[float, float],
    k_range: tuple[float, float],
    resolution: tuple[int, int] = (64, 64),
    horizon: float = 400.0,
    *,
    samples: int | None = None,
    tol: float = 1e-8,
    discard_fraction: float = 0.2,
    m_max: int = 4,
    n_max: int = 4,
    bound: float = DEFAULT_LOCK_BOUND,
    threads: int | None = None,
) -> TongueScan:
    """Locking verdicts on a ``resolution = (n_delta, n_k)`` parameter grid.

    Each k-row is simulated as one vectorised batch, so results do not
    depend on ``threads``. Integration failures are recorded per row in
    ``errors`` and leave unlocked, empty reports in the grid.
    """
    nd, nk = (int(x) for x in resolution)
    if not (1 <= nd <= 256 and 1 <= nk <= 256):
        raise DomainError("resolution must lie within 256 x 256")
    if not (math.isfinite(horizon) and horizon > 0):
        raise DomainError("horizon must be finite and positive")
    deltas = np.linspace(delta_range[0], delta_range[1], nd)
    ks = np.linspace(k_range[0], k_range[1], nk)
    n_samples = samples or max(200, int(horizon / 0.2))
    times = np.linspace(0.0, horizon, n_samples + 1)
    threads = threads or int(os.environ.get("NHSYNC_THREADS", 0)) or (os.cpu_count() or 1)

    def job(kval):
        return _scan_row(family, deltas, kval, times, tol, discard_fraction, m_max, n_max, bound)

    if threads == 1:
        rows = [job(kv) for kv in ks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(job, ks))
    errors = {float(ks[i]): msg for i, (_, msg) in enumerate(rows) if msg}
    return TongueScan(deltas, ks, [r for r, _ in rows], errors)


# --------------------------------------------------------------------------
# uniformly attracting trajectories


@dataclass(frozen=True)
class AttractingResult:
    verdict: str  # "attracting", "not-uniformly-attracting" or "no-common-limit"
    exponent: float
    window_exponents: np.ndarray  # leading exponent per window, one row per candidate
    trajectory: object = None
    spread: float = math.nan


def attracting_trajectory(
    sys: SystemSpec,
    x0_candidates,
    horizon: float,
    tol: float = 1e-9,
    *,
    t0: float = 0.0,
    window: float | None = None,
    discard_fraction: float = 0.2,
    margin: float = 1e-3,
    converge_tol: float = 1e-6,
) -> AttractingResult:
    """Check for a uniformly attracting trajectory among ``x0_candidates``.

    Every candidate is flowed with a full tangent frame re-orthonormalised
    once per ``window``. The verdict is ``"attracting"`` when all candidates
    end within ``converge_tol`` of each other and the leading finite-time
    exponent of every post-transient window is below ``-margin``. A window
    exponent at or above ``-margin`` gives ``"not-uniformly-attracting"``.
    ``exponent`` is the leading exponent averaged over the post-transient
    window of the first candidate.
    """
    X0 = np.atleast_2d(np.asarray(x0_candidates, dtype=float))
    if X0.shape[1] != sys.dim_state:
        raise DomainError("candidates must have the system dimension")
    window = horizon / 20 if window is None else window
    n = sys.dim_state
    results = [integrate_with_tangents(sys, x, np.eye(n), t0, t0 + horizon, window, tol) for x in X0]
    rows, means = [], []
    for res in results:
        w = res.window_log_growth / res.window_lengths[:, None]
        ends = t0 + np.cumsum(res.window_lengths)
        keep = ends > t0 + discard_fraction * horizon
        lead = np.max(w[keep], axis=1)
        rows.append(lead)
        means.append(float(np.sum(np.max(res.window_log_growth[keep], axis=1)) / np.sum(res.window_lengths[keep])))
    wexp = np.array(rows)
    finals = np.array([res.trajectory.final for res in results])
    spread = float(np.max(np.abs(finals - finals[0]))) if len(finals) > 1 else 0.0
    scale = 1.0 + float(np.max(np.abs(finals)))
    if np.any(wexp >= -margin):
        verdict = "not-uniformly-attracting"
    elif spread > converge_tol * scale:
        verdict = "no-common-limit"
    else:
        verdict = "attracting"
    traj = results[0].trajectory if verdict == "attracting" else None
    return AttractingResult(verdict, means[0], wexp, traj, spread)
