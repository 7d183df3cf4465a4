"""Oscillator networks and their hierarchical aggregation into synchronised clusters.

A network mixes phase nodes (``theta' = omega + ...``) and Cartesian
Poincare nodes. Edges act on their target:

* phase target: ``theta_i' += k sin(q theta_j - p theta_i)`` with the source
  phase ``theta_j`` (read off the angle for Poincare sources);
* Poincare target and source: diffusive ``x_i' += k (x_j - x_i)``.

A scalar input ``u(t)`` enters node ``i`` with gain ``g_i`` (on ``theta'`` for
phase nodes, on ``y'`` for Poincare nodes).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DomainError, PreconditionError
from .ode import SystemSpec, Trajectory, integrate, lyapunov_spectrum
from .sync import DEFAULT_LOCK_BOUND, Locking, PhaseSeries, detect_mn_locking, rotation_number
from .torus import TWO_PI

__all__ = [
    "PhaseNode",
    "PoincareNode",
    "Edge",
    "InputSignal",
    "NetworkSpec",
    "NetworkRun",
    "EffectiveOscillator",
    "AggregationLevel",
    "AggregationTree",
    "simulate_network",
    "sync_matrix",
    "find_clusters",
    "collective_phase",
    "effective_oscillator",
    "fit_reduced_network",
    "aggregate",
    "all_to_all",
    "two_block_network",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseNode:
    omega: float
    name: str = ""

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class PoincareNode:
    omega: float = 1.0
    alpha: float = 1.0
    a: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not (self.alpha > 0 and self.a > 0):
            raise DomainError("alpha and a must be positive")

    @property
    def dim(self) -> int:
        return 2


Node = Union[PhaseNode, PoincareNode]


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    strength: float
    harmonics: tuple[int, int] = (1, 1)  # (p, q): k sin(q theta_src - p theta_tgt)


@dataclass(frozen=True)
class InputSignal:
    """``u(t) = sum_k amplitudes[k] sin(frequencies[k] t + phases[k])``."""

    amplitudes: tuple[float, ...] = ()
    frequencies: tuple[float, ...] = ()
    phases: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.amplitudes) != len(self.frequencies):
            raise DomainError("amplitudes and frequencies must have equal length")
        if self.phases and len(self.phases) != len(self.frequencies):
            raise DomainError("phases must match frequencies")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        ph = self.phases or (0.0,) * len(self.frequencies)
        out = np.zeros_like(t)
        for a, w, p in zip(self.amplitudes, self.frequencies, ph):
            out = out + a * np.sin(w * t + p)
        return out

    @property
    def is_zero(self) -> bool:
        return not any(self.amplitudes)

    def phase(self, t) -> np.ndarray | None:
        """Unwrapped phase of a single-tone input (None otherwise)."""
        if len(self.frequencies) != 1:
            return None
        p = self.phases[0] if self.phases else 0.0
        return self.frequencies[0] * np.asarray(t, dtype=float) + p


@dataclass(frozen=True)
class NetworkSpec:
    nodes: tuple
    edges: tuple = ()
    input_gains: tuple[float, ...] = ()
    input: InputSignal = field(default_factory=InputSignal)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        N = len(self.nodes)
        if N == 0:
            raise DomainError("network needs at least one node")
        gains = tuple(self.input_gains) or (0.0,) * N
        if len(gains) != N:
            raise DomainError("input_gains must have one entry per node")
        object.__setattr__(self, "input_gains", gains)
        for e in self.edges:
            if not (0 <= e.source < N and 0 <= e.target < N):
                raise DomainError(f"edge {e} has an invalid endpoint")
            if e.source == e.target:
                raise DomainError("self-loops are not supported")
            tgt, src = self.nodes[e.target], self.nodes[e.source]
            if isinstance(tgt, PoincareNode) and not isinstance(src, PoincareNode):
                raise DomainError("Poincare targets need Poincare sources (diffusive coupling)")

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([n.dim for n in self.nodes])])

    @property
    def dim_state(self) -> int:
        return int(self.offsets[-1])

    def default_state(self) -> np.ndarray:
        parts = [[0.0] if isinstance(n, PhaseNode) else [n.a, 0.0] for n in self.nodes]
        return np.concatenate(parts)

    def coupling_strength(self, i: int, j: int) -> float:
        """Total absolute coupling between nodes ``i`` and ``j`` (both directions)."""
        return sum(abs(e.strength) for e in self.edges if {e.source, e.target} == {i, j})

    def permuted(self, perm: Sequence[int]) -> "NetworkSpec":
        """Relabel nodes: new node ``perm[i]`` is old node ``i``."""
        perm = list(perm)
        inv = np.argsort(perm)
        nodes = tuple(self.nodes[inv[i]] for i in range(self.size))
        edges = tuple(Edge(perm[e.source], perm[e.target], e.strength, e.harmonics) for e in self.edges)
        gains = tuple(self.input_gains[inv[i]] for i in range(self.size))
        return NetworkSpec(nodes, edges, gains, self.input)

    def system(self) -> SystemSpec:
        N = self.size
        off = self.offsets
        is_phase = np.array([isinstance(n, PhaseNode) for n in self.nodes])
        omega = np.array([n.omega for n in self.nodes], dtype=float)
        ph_idx = np.flatnonzero(is_phase)
        pc_idx = np.flatnonzero(~is_phase)
        ph_slot = off[ph_idx]
        pcx = off[pc_idx]
        pcy = pcx + 1
        alpha = np.array([self.nodes[i].alpha for i in pc_idx], dtype=float)
        amp = np.array([self.nodes[i].a for i in pc_idx], dtype=float)
        gains = np.asarray(self.input_gains, dtype=float)
        u = self.input
        has_input = not u.is_zero and np.any(gains != 0)

        pe = [e for e in self.edges if is_phase[e.target]]
        de = [e for e in self.edges if not is_phase[e.target]]
        pe_src = np.array([e.source for e in pe], dtype=int)
        pe_tgt = np.array([e.target for e in pe], dtype=int)
        pe_k = np.array([e.strength for e in pe], dtype=float)
        pe_p = np.array([e.harmonics[0] for e in pe], dtype=float)
        pe_q = np.array([e.harmonics[1] for e in pe], dtype=float)
        de_src = np.array([off[e.source] for e in de], dtype=int)
        de_tgt = np.array([off[e.target] for e in de], dtype=int)
        de_k = np.array([e.strength for e in de], dtype=float)
        dim = self.dim_state

        def node_phases(x):
            th = np.empty(N)
            th[ph_idx] = x[ph_slot]
            th[pc_idx] = np.arctan2(x[pcy], x[pcx])
            return th

        def rhs(x, t):
            dx = np.zeros(dim)
            if ph_idx.size:
                dx[ph_slot] = omega[ph_idx]
            if pc_idx.size:
                X, Y = x[pcx], x[pcy]
                q = alpha * (np.sqrt(X * X + Y * Y) - amp)
                w = omega[pc_idx]
                dx[pcx] = -q * X - w * Y
                dx[pcy] = w * X - q * Y
            if pe:
                th = node_phases(x)
                c = pe_k * np.sin(pe_q * th[pe_src] - pe_p * th[pe_tgt])
                dx += np.bincount(off[pe_tgt], weights=c, minlength=dim)
            if de:
                for d in (0, 1):
                    c = de_k * (x[de_src + d] - x[de_tgt + d])
                    dx += np.bincount(de_tgt + d, weights=c, minlength=dim)
            if has_input:
                ut = float(u(t))
                if ph_idx.size:
                    dx[ph_slot] += gains[ph_idx] * ut
                if pc_idx.size:
                    dx[pcy] += gains[pc_idx] * ut
            return dx

        sys = SystemSpec(dim, rhs, None, tuple(u.frequencies), "network")
        sys.meta["node_phases"] = node_phases
        return sys


def all_to_all(indices: Sequence[int], strength: float, harmonics=(1, 1)) -> list[Edge]:
    return [Edge(j, i, strength, harmonics) for i in indices for j in indices if i != j]


def two_block_network(
    intra: float = 0.5,
    inter: float = 0.02,
    freqs1: Sequence[float] = (0.95, 1.0, 1.05),
    freqs2: Sequence[float] = (1.35, 1.4, 1.45),
) -> NetworkSpec:
    """Six phase nodes in two all-to-all blocks, every cross pair coupled by ``inter``."""
    nodes = tuple(PhaseNode(w, f"n{i}") for i, w in enumerate(list(freqs1) + list(freqs2)))
    b1 = list(range(len(freqs1)))
    b2 = list(range(len(freqs1), len(nodes)))
    edges = all_to_all(b1, intra) + all_to_all(b2, intra)
    edges += [Edge(j, i, inter) for i in b1 for j in b2] + [Edge(i, j, inter) for i in b1 for j in b2]
    return NetworkSpec(nodes, tuple(edges))


@dataclass(frozen=True)
class NetworkRun:
    phases: PhaseSeries
    trajectory: Trajectory


def simulate_network(
    net: NetworkSpec,
    x0=None,
    horizon: float = 200.0,
    tol: float = 1e-8,
    *,
    dt: float = 0.05,
    t0: float = 0.0,
) -> NetworkRun:
    """Integrate the product system and read every node's phase on a grid of step ``dt``."""
    sys = net.system()
    x0 = net.default_state() if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (net.dim_state,):
        raise DomainError(f"x0 must have shape ({net.dim_state},)")
    n = int(round(horizon / dt))
    times = t0 + dt * np.arange(n + 1)
    traj = integrate(sys, x0, t0, float(times[-1]), tol, t_eval=times, max_step=0.5)
    raw = np.array([sys.meta["node_phases"](x) for x in traj.states]).T
    return NetworkRun(PhaseSeries.from_wrapped(times, raw), traj)


def _component(ps: PhaseSeries, i: int) -> PhaseSeries:
    return PhaseSeries(ps.times, ps.phases[i])


def sync_matrix(
    phases: PhaseSeries,
    bound: float = DEFAULT_LOCK_BOUND,
    m_max: int = 4,
    n_max: int = 4,
    discard_fraction: float = 0.2,
) -> list[list[Optional[Locking]]]:
    """Pairwise m:n locking; entry ``[i][j]`` tests ``m theta_j - n theta_i``.

    Only ``i < j`` is computed; ``[j][i]`` holds the same locking with m and n
    swapped. Diagonal entries are ``(1, 1, 0)``.
    """
    N = phases.n_components
    M: list[list[Optional[Locking]]] = [[None] * N for _ in range(N)]
    for i in range(N):
        M[i][i] = Locking(1, 1, 0.0)
        for j in range(i + 1, N):
            lk = detect_mn_locking(_component(phases, i), _component(phases, j), m_max, n_max, bound, discard_fraction)
            M[i][j] = lk
            M[j][i] = None if lk is None else Locking(lk.n, lk.m, lk.residual)
    return M


def find_clusters(matrix, require_ratio: tuple[int, int] | None = None) -> list[tuple[int, ...]]:
    """Connected components of the locked-pair graph, sorted by smallest member."""
    N = len(matrix)
    parent = list(range(N))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(N):
        for j in range(i + 1, N):
            lk = matrix[i][j]
            if lk is None:
                continue
            if require_ratio is not None and (lk.m, lk.n) != tuple(require_ratio):
                continue
            a, b = root(i), root(j)
            if a != b:
                parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(N):
        groups.setdefault(root(i), []).append(i)
    return sorted((tuple(g) for g in groups.values()), key=lambda g: g[0])


def collective_phase(phases: PhaseSeries, members: Sequence[int]) -> np.ndarray:
    """Unwrapped circular mean of the member phases."""
    z = np.mean(np.exp(1j * phases.phases[list(members)]), axis=0)
    psi = np.unwrap(np.angle(z))
    # keep the branch of the first member so collective phases are comparable
    shift = TWO_PI * np.round((phases.phases[members[0], 0] - psi[0]) / TWO_PI)
    return psi + shift


@dataclass(frozen=True)
class EffectiveOscillator:
    members: tuple[int, ...]
    omega_hat: float
    omega_error: float
    input_response: float
    intercept: float
    r_squared: float
    input_locking: Optional[Locking] = None


def _ls(cols: list[np.ndarray], y: np.ndarray, min_std: float = 1e-3):
    """Least squares on columns whose spread exceeds ``min_std`` (others get 0)."""
    keep = [i for i, c in enumerate(cols) if i == 0 or np.std(c) > min_std]
    A = np.stack([cols[i] for i in keep], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    out = np.zeros(len(cols))
    out[keep] = coef
    return out


def effective_oscillator(
    members: Sequence[int],
    phases: PhaseSeries,
    net: NetworkSpec | None = None,
    *,
    discard_fraction: float = 0.2,
    fit_fraction: float = 1.0,
    bound: float = DEFAULT_LOCK_BOUND,
) -> EffectiveOscillator:
    """Replace a 1:1 locked cluster by ``psi' = omega_hat + beta u_c(t)``.

    ``u_c`` is the input times the mean member gain. ``beta`` (and an
    intercept) are fitted by least squares on the first ``fit_fraction`` of
    the post-transient window; ``r_squared`` is measured on the remainder
    (or on the fit window when ``fit_fraction == 1``).
    """
    members = tuple(int(i) for i in members)
    for a in members:
        for b in members:
            if a < b:
                lk = detect_mn_locking(_component(phases, a), _component(phases, b), 1, 1, bound, discard_fraction)
                if lk is None:
                    raise PreconditionError(f"nodes {a} and {b} are not 1:1 locked")
    psi = collective_phase(phases, members)
    series = PhaseSeries(phases.times, psi)
    rho, err = rotation_number(series, 0, discard_fraction)
    t = phases.times
    i0 = int(np.searchsorted(t, t[0] + discard_fraction * (t[-1] - t[0])))
    rate = np.gradient(psi, t)[i0:]
    tt = t[i0:]
    if net is not None and not net.input.is_zero:
        g = float(np.mean([net.input_gains[i] for i in members]))
        u = g * net.input(tt)
    else:
        u = np.zeros_like(tt)
    n_fit = max(2, int(round(fit_fraction * tt.size)))
    coef = _ls([np.ones(n_fit), u[:n_fit]], rate[:n_fit])
    val = slice(n_fit, None) if n_fit < tt.size else slice(0, n_fit)
    pred = coef[0] + coef[1] * u[val]
    ss_res = float(np.sum((rate[val] - pred) ** 2))
    ss_tot = float(np.sum((rate[val] - rate[val].mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-12 else 0.0)
    input_lock = None
    if net is not None and not net.input.is_zero:
        ph_in = net.input.phase(t)
        if ph_in is not None:
            input_lock = detect_mn_locking(PhaseSeries(t, ph_in), series, 4, 4, bound, discard_fraction)
    return EffectiveOscillator(members, TWO_PI * rho, TWO_PI * err, float(coef[1]), float(coef[0]), r2, input_lock)


# --------------------------------------------------------------------------
# reduced networks and the aggregation loop


@dataclass(frozen=True)
class ReducedFit:
    network: NetworkSpec
    intercepts: np.ndarray
    couplings: np.ndarray  # k_hat[c, c']: effect of c' on c
    input_response: np.ndarray


def fit_reduced_network(
    psi: np.ndarray, times: np.ndarray, net: NetworkSpec, clusters: Sequence[Sequence[int]], fit: slice
) -> ReducedFit:
    """Fit ``psi_c' = nu_c + sum_c' k_cc' sin(psi_c' - psi_c) + beta_c u_c(t)`` by least squares.

    Regressors with negligible spread over the fit window (for instance the
    sine of a locked phase difference) are dropped and get coefficient 0.
    """
    C = len(clusters)
    rate = np.gradient(psi, times, axis=1)
    u_full = net.input(times) if not net.input.is_zero else np.zeros_like(times)
    nu = np.zeros(C)
    K = np.zeros((C, C))
    beta = np.zeros(C)
    for c in range(C):
        others = [d for d in range(C) if d != c]
        g = float(np.mean([net.input_gains[i] for i in clusters[c]]))
        cols = [np.ones_like(times[fit])]
        cols += [np.sin(psi[d, fit] - psi[c, fit]) for d in others]
        cols.append(g * u_full[fit])
        coef = _ls(cols, rate[c, fit])
        nu[c] = coef[0]
        for d, kc in zip(others, coef[1:-1]):
            K[c, d] = kc
        beta[c] = coef[-1]
    nodes = tuple(PhaseNode(float(nu[c]), f"c{c}") for c in range(C))
    edges = tuple(Edge(d, c, float(K[c, d])) for c in range(C) for d in range(C) if c != d and K[c, d] != 0)
    reduced = NetworkSpec(nodes, edges, tuple(float(b) for b in beta), net.input)
    return ReducedFit(reduced, nu, K, beta)


@dataclass
class AggregationLevel:
    partition: list[tuple[int, ...]]
    oscillators: list[EffectiveOscillator]
    couplings: np.ndarray
    validation_error: float
    validated: bool
    tier: float
    intercepts: np.ndarray = field(default_factory=lambda: np.zeros(0))  # fitted natural frequencies


@dataclass
class AggregationTree:
    leaves: tuple[int, ...]
    levels: list[AggregationLevel] = field(default_factory=list)
    threshold: float = 0.15
    chimera: bool = False
    lyapunov_max: Optional[float] = None

    @property
    def partitions(self) -> list[list[tuple[int, ...]]]:
        return [lv.partition for lv in self.levels]

    def check_monotone(self) -> bool:
        prev = [(i,) for i in self.leaves]
        for part in self.partitions:
            for block in prev:
                if not any(set(block) <= set(c) for c in part):
                    return False
            prev = part
        return True

    def as_dict(self) -> dict:
        return {
            "leaves": list(self.leaves),
            "threshold": self.threshold,
            "chimera": self.chimera,
            "lyapunov_max": self.lyapunov_max,
            "levels": [
                {
                    "partition": [list(c) for c in lv.partition],
                    "omega_hat": [o.omega_hat for o in lv.oscillators],
                    "input_response": [o.input_response for o in lv.oscillators],
                    "input_locked": [o.input_locking is not None for o in lv.oscillators],
                    "couplings": lv.couplings.tolist(),
                    "natural_frequencies": lv.intercepts.tolist(),
                    "validation_error": lv.validation_error,
                    "validated": lv.validated,
                    "tier": lv.tier,
                }
                for lv in self.levels
            ],
        }


def _cluster_strength(net: NetworkSpec, a: Sequence[int], b: Sequence[int]) -> float:
    return sum(abs(e.strength) for e in net.edges
               if (e.source in a and e.target in b) or (e.source in b and e.target in a))


def _merge(partition, lock_pairs):
    N = len(partition)
    M = [[None] * N for _ in range(N)]
    for i, j in lock_pairs:
        M[i][j] = M[j][i] = Locking(1, 1, 0.0)
    groups = find_clusters(M)
    merged = [tuple(sorted(sum((partition[g] for g in grp), ()))) for grp in groups]
    return sorted(merged, key=lambda c: c[0])


def aggregate(
    net: NetworkSpec,
    horizon: float = 300.0,
    max_levels: int = 4,
    *,
    x0=None,
    tol: float = 1e-8,
    dt: float = 0.05,
    discard_fraction: float = 0.2,
    bound: float = DEFAULT_LOCK_BOUND,
    validation_horizon: float = 50.0,
    threshold: float = 0.15,
    tier_ratio: float = 0.5,
    lyapunov: bool = False,
) -> AggregationTree:
    """Hierarchical reduction of ``net`` into synchronised clusters.

    One simulation of the full network supplies all phases. Starting from
    singletons, each level considers pairs of current clusters whose total
    coupling is at least ``tier_ratio`` times the strongest inter-cluster
    coupling (weaker tiers are tried only if no stronger pair merges) and
    merges those whose collective phases are 1:1 locked. Every level stores
    the effective oscillators and a reduced phase network fitted on the
    full-run collective phases; the reduced network is simulated over the
    final ``validation_horizon`` and its sup deviation from the collective
    phases is the level's validation error. The loop stops when no pair
    merges or after ``max_levels``.
    """
    if not (math.isfinite(horizon) and horizon > validation_horizon > 0):
        raise DomainError("horizon must be finite and exceed validation_horizon")
    run = simulate_network(net, x0, horizon, tol, dt=dt)
    ps = run.phases
    t = ps.times
    tree = AggregationTree(tuple(range(net.size)), threshold=threshold)
    i0 = int(np.searchsorted(t, t[0] + discard_fraction * (t[-1] - t[0])))
    iv = int(np.searchsorted(t, t[-1] - validation_horizon))
    partition = [(i,) for i in range(net.size)]
    for _ in range(max_levels):
        C = len(partition)
        if C == 1:
            break
        psi = np.array([collective_phase(ps, c) for c in partition])
        cps = PhaseSeries(t, psi)
        strength = {(a, b): _cluster_strength(net, partition[a], partition[b])
                    for a in range(C) for b in range(a + 1, C)}
        tiers = sorted({s for s in strength.values() if s > 0}, reverse=True)
        merged_pairs, used_tier = [], 0.0
        while tiers:
            top = tiers[0]
            eligible = [pair for pair, s in strength.items() if s >= tier_ratio * top and s > 0]
            for a, b in eligible:
                lk = detect_mn_locking(_component(cps, a), _component(cps, b), 1, 1, bound, discard_fraction)
                if lk is not None:
                    merged_pairs.append((a, b))
            used_tier = tier_ratio * top
            if merged_pairs:
                break
            tiers = [s for s in tiers if s < tier_ratio * top]
        if not merged_pairs:
            break
        partition = _merge(partition, merged_pairs)
        tree.levels.append(_build_level(net, ps, partition, i0, iv, tol, discard_fraction, bound, used_tier, threshold))
    if not tree.levels:
        # no merge at all: record the singleton partition as the only level
        tree.levels.append(_build_level(net, ps, partition, i0, iv, tol, discard_fraction, bound, 0.0, threshold))
    final = tree.levels[-1].partition
    multi = any(len(c) > 1 for c in final)
    singles = any(len(c) == 1 for c in final)
    if lyapunov:
        tree.lyapunov_max = float(lyapunov_spectrum(net.system(), run.trajectory.final, 200.0, k=1, seed=0)[0])
    tree.chimera = bool(multi and singles and (tree.lyapunov_max is None or tree.lyapunov_max > 0.01))
    return tree


def _build_level(net, ps, partition, i0, iv, tol, discard, bound, tier, threshold) -> AggregationLevel:
    t = ps.times
    oscs = [effective_oscillator(c, ps, net, discard_fraction=discard, bound=bound) for c in partition]
    psi = np.array([collective_phase(ps, c) for c in partition])
    fit = slice(i0, iv + 1)
    red = fit_reduced_network(psi, t, net, partition, fit)
    x0 = psi[:, iv]
    tv = t[iv:] - t[iv]
    sim = simulate_network(red.network, x0, float(tv[-1]), tol, dt=float(t[1] - t[0]), t0=float(t[iv]))
    n = min(sim.phases.times.size, tv.size)
    err = float(np.max(np.abs(sim.phases.phases[:, :n] - (psi[:, iv:iv + n] - psi[:, iv:iv + 1] + x0[:, None]))))
    return AggregationLevel(list(partition), oscs, red.couplings, err, err <= threshold, tier, red.intercepts)
