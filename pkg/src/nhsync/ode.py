"""Adaptive integration of non-autonomous ODEs and tangent propagation.

All integration goes through one Dormand-Prince 5(4) stepper. Trajectories
keep the derivative at every stored sample, so interpolation is cubic
Hermite and reproduces stored states exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import DomainError, IntegrationError, NonFiniteError, OrthogonalityError

__all__ = [
    "SystemSpec",
    "Trajectory",
    "TangentResult",
    "integrate",
    "propagate",
    "sample_flow",
    "integrate_with_tangents",
    "fd_jacobian",
    "jacobian_check",
    "lyapunov_spectrum",
]

Field = Callable[[np.ndarray, float], np.ndarray]

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4


def fd_jacobian(fun: Field, x: np.ndarray, t: float) -> np.ndarray:
    """Central-difference jacobian with h_i = max(1e-6, 1e-6 |x_i|)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    jac = np.empty((n, n))
    for i in range(n):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.asarray(fun(xp, t)) - np.asarray(fun(xm, t))) / (2 * h)
    return jac


@dataclass(frozen=True)
class SystemSpec:
    """A non-autonomous vector field ``x' = v(x, t)``.

    ``forcing_frequencies`` lists the angular frequencies of quasiperiodic
    time dependence (empty for autonomous fields). ``chart`` optionally
    carries a phase/normal coordinate description of the same dynamics.
    """

    dim_state: int
    vector_field: Field
    jacobian_fn: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    forcing_frequencies: tuple[float, ...] = ()
    name: str = ""
    chart: object = None
    nonsmooth: Optional[Callable[[np.ndarray], bool]] = None
    meta: dict = field(default_factory=dict, compare=False)

    def eval(self, x, t: float) -> np.ndarray:
        return np.asarray(self.vector_field(np.asarray(x, dtype=float), t), dtype=float)

    def jacobian(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian_fn is None:
            return fd_jacobian(self.eval, x, t)
        return np.asarray(self.jacobian_fn(x, t), dtype=float)

    @property
    def has_analytic_jacobian(self) -> bool:
        return self.jacobian_fn is not None

    def is_nonsmooth_at(self, x) -> bool:
        return bool(self.nonsmooth(np.asarray(x, dtype=float))) if self.nonsmooth else False


class Trajectory:
    """Time-stamped states with cubic Hermite interpolation.

    ``times`` are strictly increasing. For backward integrations the samples
    are stored in ascending time as well; ``t_start``/``t_end`` remember the
    direction of integration.
    """

    def __init__(self, times, states, derivs, t_start: float | None = None):
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        derivs = np.asarray(derivs, dtype=float)
        if times.ndim != 1 or states.shape[0] != times.size or derivs.shape != states.shape:
            raise DomainError("trajectory arrays have inconsistent shapes")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise DomainError("trajectory times must be strictly increasing")
        self.times = times
        self.states = states
        self.derivs = derivs
        self.t_start = float(times[0] if t_start is None else t_start)
        self.t_end = float(times[-1] if self.t_start == times[0] else times[0])
        for arr in (self.times, self.states, self.derivs):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0] if self.t_start == self.times[0] else self.states[-1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1] if self.t_start == self.times[0] else self.states[0]

    def __len__(self) -> int:
        return self.times.size

    def _locate(self, t: np.ndarray) -> np.ndarray:
        if np.any(t < self.times[0] - 1e-12 * max(1.0, abs(self.times[0]))) or np.any(
            t > self.times[-1] + 1e-12 * max(1.0, abs(self.times[-1]))
        ):
            raise DomainError("interpolation time outside trajectory span")
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, max(self.times.size - 2, 0))

    def __call__(self, t):
        """State(s) at time(s) ``t``; scalar t gives a vector."""
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        if self.times.size == 1:
            out = np.repeat(self.states[:1], tt.size, axis=0)
            return out[0] if scalar else out
        i = self._locate(tt)
        t0, t1 = self.times[i], self.times[i + 1]
        h = (t1 - t0)[:, None]
        s = ((tt - t0) / (t1 - t0))[:, None]
        y0, y1 = self.states[i], self.states[i + 1]
        f0, f1 = self.derivs[i], self.derivs[i + 1]
        s2 = s * s
        s3 = s2 * s
        out = (
            (2 * s3 - 3 * s2 + 1) * y0
            + (s3 - 2 * s2 + s) * h * f0
            + (-2 * s3 + 3 * s2) * y1
            + (s3 - s2) * h * f1
        )
        return out[0] if scalar else out

    def derivative(self, t):
        """Time derivative of the Hermite interpolant."""
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        i = self._locate(tt)
        t0, t1 = self.times[i], self.times[i + 1]
        h = (t1 - t0)[:, None]
        s = ((tt - t0) / (t1 - t0))[:, None]
        y0, y1 = self.states[i], self.states[i + 1]
        f0, f1 = self.derivs[i], self.derivs[i + 1]
        s2 = s * s
        out = (
            (6 * s2 - 6 * s) * y0 / h
            + (3 * s2 - 4 * s + 1) * f0
            + (-6 * s2 + 6 * s) * y1 / h
            + (3 * s2 - 2 * s) * f1
        )
        return out[0] if scalar else out

    def reversed(self) -> "Trajectory":
        """The same curve traversed backwards, parametrised by -t."""
        return Trajectory(-self.times[::-1], self.states[::-1], -self.derivs[::-1], t_start=-self.t_end)

    def resample(self, times) -> "Trajectory":
        times = np.asarray(times, dtype=float)
        return Trajectory(times, self(times), self.derivative(times))


def _initial_step(fun, t0, y0, f0, direction, tol):
    scale = tol * (1.0 + np.abs(y0))
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = fun(y1, t0 + direction * h0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def dp5_steps(
    fun: Field,
    t0: float,
    y0: np.ndarray,
    t1: float,
    tol: float = 1e-8,
    max_step: float = np.inf,
    first_step: float | None = None,
) -> Iterator[tuple[float, np.ndarray, np.ndarray]]:
    """Yield ``(t, y, f)`` at the start and after every accepted step.

    The local error estimate of each accepted step satisfies
    ``|err_i| <= tol * (1 + max(|y_i|, |y_new_i|))`` componentwise.
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    direction = 1.0 if t1 > t0 else -1.0
    f = np.asarray(fun(y, t), dtype=float)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("non-finite vector field at initial state", t)
    yield t, y, f
    if t1 == t0:
        return
    h = first_step if first_step is not None else _initial_step(fun, t, y, f, direction, tol)
    h = min(abs(h), max_step, abs(t1 - t))
    k = np.empty((7,) + y.shape)
    while direction * (t1 - t) > 0:
        h_min = 16 * np.spacing(max(abs(t), abs(t1), 1.0))
        if h < h_min:
            raise IntegrationError("step size underflow", t)
        last = h >= abs(t1 - t) * (1 - 1e-12)
        if last:
            h = abs(t1 - t)
        hs = direction * h
        k[0] = f
        for s in range(1, 7):
            dy = np.tensordot(_A[s], k[:s], axes=1) * hs
            k[s] = fun(y + dy, t + _C[s] * hs)
        y_new = y + hs * np.tensordot(_B, k, axes=1)
        f_new = k[6].copy()
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            # retry smaller before declaring failure
            h *= 0.25
            if h < h_min:
                raise NonFiniteError("non-finite state or vector field", t)
            continue
        err_vec = hs * np.tensordot(_E, k, axes=1)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = float(np.max(np.abs(err_vec) / scale)) if err_vec.size else 0.0
        if err <= 1.0:
            t = t1 if last else t + hs
            y, f = y_new, f_new
            yield t, y, f
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = min(h * fac, max_step)
        else:
            h *= max(0.2, 0.9 * err ** -0.2)


def propagate(
    fun: Field, y0, t0: float, t1: float, tol: float = 1e-8, max_step: float = np.inf
) -> np.ndarray:
    """Endpoint-only integration of ``y' = fun(y, t)`` (no sample storage)."""
    y = np.asarray(y0, dtype=float)
    for _, y, _ in dp5_steps(fun, t0, y, t1, tol, max_step):
        pass
    return y


def sample_flow(
    fun: Field, y0, t0: float, times, tol: float = 1e-8, max_step: float = np.inf
) -> np.ndarray:
    """States of ``y' = fun(y, t)`` at ascending ``times >= t0``, shape ``(len(times), *y0.shape)``.

    Intermediate samples come from the cubic Hermite interpolant of each
    accepted step, so the stepper never has to stop at a sample time.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise DomainError("times must be a non-empty 1-d array")
    if np.any(np.diff(times) < 0) or times[0] < t0:
        raise DomainError("times must be ascending and not before t0")
    y0 = np.asarray(y0, dtype=float)
    out = np.empty((times.size,) + y0.shape)
    j = 0
    prev = None
    for t, y, f in dp5_steps(fun, t0, y0, float(times[-1]), tol, max_step):
        if prev is None:
            while j < times.size and times[j] <= t:
                out[j] = y
                j += 1
        else:
            tp, yp, fp = prev
            k = int(np.searchsorted(times, t, side="right"))
            if k > j:
                h = t - tp
                s = (times[j:k] - tp) / h
                s = s.reshape((-1,) + (1,) * y.ndim)
                s2 = s * s
                s3 = s2 * s
                out[j:k] = ((2 * s3 - 3 * s2 + 1) * yp + (s3 - 2 * s2 + s) * h * fp
                            + (-2 * s3 + 3 * s2) * y + (s3 - s2) * h * f)
                j = k
        prev = (t, y, f)
    return out


def _check_tol(tol: float) -> None:
    if not (1e-14 < tol < 1e-2):
        raise DomainError(f"tol must lie in (1e-14, 1e-2), got {tol!r}")


def integrate(
    sys: SystemSpec,
    x0,
    t0: float,
    t1: float,
    tol: float = 1e-8,
    *,
    t_eval: Sequence[float] | None = None,
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate ``sys`` from ``(t0, x0)`` to ``t1``.

    Integration backwards in time (``t1 < t0``) is allowed; samples are still
    stored in ascending order. With ``t_eval`` only the requested times are
    stored (dense output is used to fill them in as steps complete).
    """
    _check_tol(tol)
    if t1 == t0:
        raise DomainError("t1 must differ from t0")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dim_state,):
        raise DomainError(f"x0 has shape {x0.shape}, expected ({sys.dim_state},)")
    fun = sys.eval
    if t_eval is None:
        ts, ys, fs = [], [], []
        for t, y, f in dp5_steps(fun, t0, x0, t1, tol, max_step):
            ts.append(t)
            ys.append(y)
            fs.append(f)
        if t1 < t0:
            ts, ys, fs = ts[::-1], ys[::-1], fs[::-1]
        return Trajectory(ts, ys, fs, t_start=t0)

    req = np.asarray(t_eval, dtype=float)
    direction = 1.0 if t1 > t0 else -1.0
    lo, hi = min(t0, t1), max(t0, t1)
    if np.any(req < lo) or np.any(req > hi):
        raise DomainError("t_eval outside the integration interval")
    order = np.argsort(direction * req, kind="stable")
    req_sorted = req[order]
    out_y = np.empty((req.size, sys.dim_state))
    out_f = np.empty((req.size, sys.dim_state))
    j = 0
    prev = None
    for t, y, f in dp5_steps(fun, t0, x0, t1, tol, max_step):
        if prev is None:
            while j < req.size and req_sorted[j] == t:
                out_y[order[j]], out_f[order[j]] = y, f
                j += 1
        else:
            tp, yp, fp = prev
            seg = Trajectory([min(tp, t), max(tp, t)],
                             [yp, y] if direction > 0 else [y, yp],
                             [fp, f] if direction > 0 else [f, fp])
            k = j
            while k < req.size and direction * (req_sorted[k] - t) <= 0:
                k += 1
            if k > j:
                idx = order[j:k]
                out_y[idx] = seg(req_sorted[j:k])
                out_f[idx] = seg.derivative(req_sorted[j:k])
                j = k
        prev = (t, y, f)
    srt = np.argsort(req)
    return Trajectory(req[srt], out_y[srt], out_f[srt], t_start=float(req[srt][0] if direction > 0 else req[srt][-1]))


@dataclass(frozen=True)
class TangentResult:
    trajectory: Trajectory
    log_growth: np.ndarray
    horizon: float
    window_log_growth: np.ndarray  # one row per renormalisation interval
    window_lengths: np.ndarray
    frame: np.ndarray  # orthonormal frame after the last renormalisation

    @property
    def exponents(self) -> np.ndarray:
        return self.log_growth / self.horizon


def integrate_with_tangents(
    sys: SystemSpec,
    x0,
    frame0,
    t0: float,
    t1: float,
    renorm_interval: float,
    tol: float = 1e-9,
    max_step: float = np.inf,
) -> TangentResult:
    """Propagate ``x`` and the variational equation ``dX' = Dv dX``.

    ``frame0`` has shape ``(dim, k)`` with orthonormal columns. The frame is
    QR re-orthonormalised every ``renorm_interval``; the accumulated logs of
    the R diagonals are returned.
    """
    _check_tol(tol)
    if renorm_interval <= 0:
        raise DomainError("renorm_interval must be positive")
    if t1 <= t0:
        raise DomainError("t1 must exceed t0")
    x0 = np.asarray(x0, dtype=float)
    n = sys.dim_state
    Q = np.asarray(frame0, dtype=float).reshape(n, -1)
    k = Q.shape[1]
    if np.max(np.abs(Q.T @ Q - np.eye(k))) > 1e-8:
        raise DomainError("frame0 must be orthonormal")

    def aug(z, t):
        x = z[:n]
        V = z[n:].reshape(n, k)
        return np.concatenate([sys.eval(x, t), (sys.jacobian(x, t) @ V).ravel()])

    ts, xs, fs = [], [], []
    logs = np.zeros(k)
    windows, lengths = [], []
    t = float(t0)
    x = x0
    while t < t1 - 1e-12 * max(1.0, abs(t1)):
        t_next = min(t + renorm_interval, t1)
        z = np.concatenate([x, Q.ravel()])
        first = True
        for tt, zz, ff in dp5_steps(aug, t, z, t_next, tol, max_step):
            if first and ts:
                first = False
                continue
            first = False
            ts.append(tt)
            xs.append(zz[:n])
            fs.append(ff[:n])
            z = zz
        x = z[:n]
        Q, R = np.linalg.qr(z[n:].reshape(n, k))
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1.0
        Q = Q * signs
        d = np.abs(np.diag(R))
        if np.any(d == 0) or not np.all(np.isfinite(d)):
            raise NonFiniteError("tangent frame collapsed", t)
        if np.max(np.abs(Q.T @ Q - np.eye(k))) > 1e-6:
            raise OrthogonalityError("tangent frame not orthonormal after QR")
        w = np.log(d)
        logs += w
        windows.append(w)
        lengths.append(t_next - t)
        t = t_next
    traj = Trajectory(ts, xs, fs, t_start=t0)
    return TangentResult(traj, logs, t1 - t0, np.array(windows), np.array(lengths), Q)


def lyapunov_spectrum(
    sys: SystemSpec,
    x0,
    horizon: float,
    *,
    transient: float = 0.0,
    k: int | None = None,
    renorm_interval: float = 1.0,
    tol: float = 1e-9,
    seed: int | None = 0,
    t0: float = 0.0,
) -> np.ndarray:
    """Lyapunov exponents (Benettin/QR) after an optional transient.

    ``seed`` picks a random orthonormal starting frame; ``None`` uses the
    identity columns. The frame is evolved through the transient too, so
    the measured growth starts from an aligned frame.
    """
    n = sys.dim_state
    k = n if k is None else k
    x = np.asarray(x0, dtype=float)
    if seed is None:
        frame = np.eye(n)[:, :k]
    else:
        rng = np.random.default_rng(seed)
        frame, _ = np.linalg.qr(rng.standard_normal((n, k)))
    if transient > 0:
        warm = integrate_with_tangents(sys, x, frame, t0, t0 + transient, renorm_interval, tol)
        x, frame = warm.trajectory.final, warm.frame
    res = integrate_with_tangents(sys, x, frame, t0 + transient, t0 + transient + horizon, renorm_interval, tol)
    return res.exponents


def jacobian_check(sys: SystemSpec, x, t: float, h: float = 1e-6) -> float:
    """Max elementwise gap between ``sys.jacobian`` and central differences."""
    if not (1e-9 < h < 1e-3):
        raise DomainError("h must lie in (1e-9, 1e-3)")
    x = np.asarray(x, dtype=float)
    n = x.size
    fd = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd[:, i] = (sys.eval(x + e, t) - sys.eval(x - e, t)) / (2 * h)
    return float(np.max(np.abs(sys.jacobian(x, t) - fd)))
