"""Graphs over a torus grid with periodic cubic spline interpolation."""
from __future__ import annotations

import csv
import itertools
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError

__all__ = ["TorusGraph", "bspline_weights", "read_graph", "write_graph"]

TWO_PI = 2 * math.pi


def bspline_weights(s, deriv: int = 0) -> tuple:
    """Uniform cubic B-spline weights for taps -1, 0, 1, 2 at offset ``s`` in [0, 1)."""
    if deriv == 0:
        s2 = s * s
        s3 = s2 * s
        t = 1 - s
        w0 = t * t * t * (1 / 6)
        w1 = s3 * 0.5 - s2 + 2 / 3
        w3 = s3 * (1 / 6)
        return (w0, w1, 1 - w0 - w1 - w3, w3)
    if deriv == 1:
        s2 = s * s
        t = 1 - s
        w0 = -0.5 * t * t
        w1 = 1.5 * s2 - 2 * s
        w3 = 0.5 * s2
        return (w0, w1, -w0 - w1 - w3, w3)
    raise DomainError("only value and first derivative weights are available")


def _prefilter(values: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Periodic interpolating-spline coefficients (circulant solve by FFT)."""
    coef = np.asarray(values, dtype=float)
    for ax in axes:
        n = coef.shape[ax]
        k = np.arange(n)
        sym = (4 + 2 * np.cos(TWO_PI * k / n)) / 6
        shape = [1] * coef.ndim
        shape[ax] = n
        coef = np.fft.ifft(np.fft.fft(coef, axis=ax) / sym.reshape(shape), axis=ax).real
    return coef


class TorusGraph:
    """A graph ``r = rho(theta, phi)`` sampled on a uniform torus grid.

    ``values`` has shape ``(p, n_1, ..., n_m)``: the first ``n_phase`` grid
    axes are oscillator phases, the rest forcing phases (advancing at
    ``forcing_frequencies``). Node ``i`` of an axis of size ``n`` sits at
    angle ``2 pi i / n``.
    """

    def __init__(self, values, n_phase: int = 1, forcing_frequencies: Sequence[float] = ()):
        values = np.array(values, dtype=float)
        if values.ndim < 2:
            raise DomainError("values must have shape (p, n_1, ..., n_m)")
        m = values.ndim - 1
        if not 1 <= n_phase <= m:
            raise DomainError("n_phase must be between 1 and the grid dimension")
        if m - n_phase != len(forcing_frequencies):
            raise DomainError("one forcing frequency per forcing axis is required")
        if not np.all(np.isfinite(values)):
            raise DomainError("graph values must be finite")
        if min(values.shape[1:]) < 4:
            raise DomainError("cubic interpolation needs at least 4 nodes per axis")
        values.setflags(write=False)
        self.values = values
        self.n_phase = n_phase
        self.forcing_frequencies = tuple(float(w) for w in forcing_frequencies)
        self._coef = None

    # -- basic geometry ---------------------------------------------------
    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.ndim - 1

    @property
    def grid(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.grid))

    @property
    def spacing(self) -> np.ndarray:
        return TWO_PI / np.asarray(self.grid, dtype=float)

    def axis_nodes(self, axis: int) -> np.ndarray:
        return TWO_PI * np.arange(self.grid[axis]) / self.grid[axis]

    def node_points(self) -> np.ndarray:
        """All node angles, shape ``(m, n_nodes)`` in C order."""
        mesh = np.meshgrid(*[self.axis_nodes(a) for a in range(self.m)], indexing="ij")
        return np.stack([g.ravel() for g in mesh])

    def flat_values(self) -> np.ndarray:
        return self.values.reshape(self.p, -1)

    def with_values(self, values) -> "TorusGraph":
        return TorusGraph(np.asarray(values).reshape(self.values.shape), self.n_phase, self.forcing_frequencies)

    @classmethod
    def constant(cls, value, grid: Sequence[int], n_phase: int = 1, forcing_frequencies=()) -> "TorusGraph":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        vals = np.broadcast_to(value.reshape((-1,) + (1,) * len(grid)), (value.size,) + tuple(grid))
        return cls(vals, n_phase, forcing_frequencies)

    @classmethod
    def from_function(cls, fn, grid: Sequence[int], n_phase: int = 1, forcing_frequencies=()) -> "TorusGraph":
        """Sample ``fn(angles (m, N)) -> (p, N)`` at the grid nodes."""
        mesh = np.meshgrid(*[TWO_PI * np.arange(n) / n for n in grid], indexing="ij")
        pts = np.stack([g.ravel() for g in mesh])
        vals = np.atleast_2d(np.asarray(fn(pts), dtype=float))
        return cls(vals.reshape((-1,) + tuple(grid)), n_phase, forcing_frequencies)

    # -- interpolation ----------------------------------------------------
    @property
    def coefficients(self) -> np.ndarray:
        if self._coef is None:
            self._coef = _prefilter(self.values, range(1, self.m + 1))
            self._coef.setflags(write=False)
        return self._coef

    def __call__(self, angles, deriv: Sequence[int] | None = None) -> np.ndarray:
        """Interpolated values at ``angles`` of shape ``(m, N)``; returns ``(p, N)``.

        ``deriv`` gives per-axis derivative orders (0 or 1).
        """
        angles = np.atleast_2d(np.asarray(angles, dtype=float))
        if angles.shape[0] != self.m:
            raise DomainError(f"expected {self.m} angle rows, got {angles.shape[0]}")
        deriv = [0] * self.m if deriv is None else list(deriv)
        coef = self.coefficients
        idx, wts = [], []
        for ax in range(self.m):
            n = self.grid[ax]
            u = np.mod(angles[ax], TWO_PI) * (n / TWO_PI)
            i = np.floor(u).astype(np.int64)
            s = u - i
            w = bspline_weights(s, deriv[ax])
            if deriv[ax]:
                w = tuple(wi * (n / TWO_PI) for wi in w)
            idx.append([(i + a - 1) % n for a in range(4)])
            wts.append(w)
        out = np.zeros((self.p, angles.shape[1]))
        for combo in itertools.product(range(4), repeat=self.m):
            w = wts[0][combo[0]]
            for ax in range(1, self.m):
                w = w * wts[ax][combo[ax]]
            sel = tuple(idx[ax][combo[ax]] for ax in range(self.m))
            out += w * coef[(slice(None),) + sel]
        return out

    def gradient(self, angles, axis: int) -> np.ndarray:
        d = [0] * self.m
        d[axis] = 1
        return self(angles, d)

    def phase_evaluator(self, phase_shift: Sequence[float]):
        """Evaluator of the graph shifted along the forcing axes.

        Returns ``ev(theta, deriv=None)``. ``theta`` has shape
        ``(n_phase, ..., n_fibers)`` where the last axis runs over the flat
        forcing-node index ``j``; the result, shape ``(p, ..., n_fibers)``,
        is the graph at ``(theta, phi_j + phase_shift)``.
        """
        coef = self.coefficients
        n = self.n_phase
        for k, delta in enumerate(phase_shift):
            ax = 1 + n + k
            nk = self.grid[n + k]
            u = delta * nk / TWO_PI
            i0 = math.floor(u)
            w = bspline_weights(u - i0)
            coef = sum(float(w[a]) * np.roll(coef, -(i0 + a - 1), axis=ax) for a in range(4))
        nf = int(np.prod(self.grid[n:])) if self.m > n else 1
        phase_grid = self.grid[:n]
        pad = np.pad(coef.reshape((self.p,) + phase_grid + (nf,)), [(0, 0)] + [(1, 2)] * n + [(0, 0)], mode="wrap")
        padded = pad.shape[1:]
        strides = [int(np.prod(padded[ax + 1:])) for ax in range(n)]
        flat = pad.reshape(self.p, -1)
        fiber = np.arange(nf)
        offsets = [sum(c[ax] * strides[ax] for ax in range(n)) for c in itertools.product(range(4), repeat=n)]

        def ev(theta, deriv: Sequence[int] | None = None):
            theta = np.asarray(theta, dtype=float)
            base = fiber
            wts = []
            for ax in range(n):
                na = phase_grid[ax]
                u = theta[ax] * (na / TWO_PI)
                fl = np.floor(u)
                s = u - fl
                i = fl.astype(np.int64) % na
                base = base + i * strides[ax]
                d = 0 if deriv is None else deriv[ax]
                w = bspline_weights(s, d)
                if d:
                    w = tuple(wi * (na / TWO_PI) for wi in w)
                wts.append(w)
            out = None
            for combo, off in zip(itertools.product(range(4), repeat=n), offsets):
                w = wts[0][combo[0]]
                for ax in range(1, n):
                    w = w * wts[ax][combo[ax]]
                term = w * np.take(flat, base + off, axis=1)
                out = term if out is None else out + term
            return out

        return ev

    # -- diagnostics --------------------------------------------------------
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def lipschitz(self, refine: int = 2) -> float:
        """Max gradient norm over a grid refined ``refine`` times."""
        mesh = np.meshgrid(*[TWO_PI * np.arange(n * refine) / (n * refine) for n in self.grid], indexing="ij")
        pts = np.stack([g.ravel() for g in mesh])
        g2 = sum(self.gradient(pts, ax) ** 2 for ax in range(self.m))
        return float(np.sqrt(np.max(g2)))

    def interpolation_error(self) -> float:
        """Estimated sup interpolation error.

        The graph restricted to every other node is interpolated back onto
        the dropped nodes; the gap, scaled by the h^4 convergence factor 1/16,
        estimates the error of the full-resolution interpolant.
        """
        if any(n % 2 or n < 8 for n in self.grid):
            raise DomainError("interpolation_error needs even axes with at least 8 nodes")
        coarse = TorusGraph(self.values[(slice(None),) + (slice(None, None, 2),) * self.m],
                            self.n_phase, self.forcing_frequencies)
        pts = self.node_points()
        return float(np.max(np.abs(coarse(pts) - self.flat_values()))) / 16.0

    def __repr__(self) -> str:
        return f"TorusGraph(p={self.p}, grid={self.grid}, n_phase={self.n_phase})"


def write_graph(graph: TorusGraph, path) -> tuple[Path, Path]:
    """CSV of node indices and values plus a JSON sidecar with grid metadata."""
    path = Path(path)
    side = path.with_suffix(".json")
    names = [f"theta{i}" for i in range(graph.n_phase)] + [f"phi{k}" for k in range(graph.m - graph.n_phase)]
    cols = names + [f"r{j}" for j in range(graph.p)]
    flat = graph.flat_values()
    index = np.indices(graph.grid).reshape(graph.m, -1)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(graph.n_nodes):
            w.writerow([int(i) for i in index[:, k]] + [repr(float(v)) for v in flat[:, k]])
    meta = {
        "grid": list(graph.grid),
        "n_phase": graph.n_phase,
        "p": graph.p,
        "forcing_frequencies": list(graph.forcing_frequencies),
        "columns": cols,
        "angle_of_index": "2*pi*i/n",
    }
    side.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path, side


def read_graph(path) -> TorusGraph:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    grid = tuple(meta["grid"])
    m, p = len(grid), meta["p"]
    vals = np.empty((p,) + grid)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != meta["columns"]:
            raise DomainError("graph CSV header does not match sidecar")
        for row in rows:
            ix = tuple(int(v) for v in row[:m])
            vals[(slice(None),) + ix] = [float(v) for v in row[m:]]
    return TorusGraph(vals, meta["n_phase"], meta["forcing_frequencies"])
