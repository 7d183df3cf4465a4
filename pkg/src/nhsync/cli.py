"""Command line runner: ``nhsync run config.json`` and ``nhsync validate config.json``.

Exit codes: 0 success, 2 configuration error (nothing written), 3 numerical
failure (a ``diagnostics.json`` explains it).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import traceback
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .chaos import ROSSLER_SECTION, SectionSpec, coherence, section_crossings
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DomainError, NhsyncError
from .invariant_graph import initial_graph, nh_rates, solve_graph
from .models import (
    AdlerChart,
    ClassINeuronParams,
    LinearSkewChart,
    PoincarePolarChart,
    circuit,
    class1_neuron,
    poincare_cartesian,
    rossler,
)
from .network import Edge, InputSignal, NetworkSpec, PhaseNode, PoincareNode, aggregate, simulate_network, two_block_network
from .ode import integrate, lyapunov_spectrum, propagate
from .sync import AdlerFamily, ForcedPoincareFamily, PhasePairFamily, arnold_tongue_scan, phase_collapse
from .torus import write_graph

log = logging.getLogger("nhsync")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(Exception):
    """Experiment finished but its result is not trustworthy."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# --------------------------------------------------------------------------
# artifact writers


def fmt(x) -> str:
    """Shortest round-trip text for numbers; plain str otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# --------------------------------------------------------------------------
# builders


def build_system(cfg: ExperimentConfig):
    p = cfg.model_params()
    if cfg.model == "poincare":
        return poincare_cartesian(p.build())
    if cfg.model == "class1":
        return class1_neuron(ClassINeuronParams(mu=p.mu))
    if cfg.model == "circuit":
        return circuit(p.build())
    if cfg.model == "rossler":
        return rossler(p.build())
    if cfg.model == "network":
        return build_network(p).system()
    raise ConfigError(f"model {cfg.model!r} has no state-space system")


def default_x0(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    p = cfg.model_params()
    if cfg.model == "poincare":
        return np.array([p.a, 0.0])
    if cfg.model == "class1":
        return np.array([0.0, p.mu])
    if cfg.model == "network":
        net = build_network(p)
        return np.asarray(p.x0, dtype=float) if p.x0 is not None else net.default_state()
    return np.array([1.0, 1.0, 0.0])[:dim] if dim == 3 else np.full(dim, 0.1)


def build_chart(cfg: ExperimentConfig):
    p = cfg.model_params()
    if cfg.model == "poincare":
        return PoincarePolarChart(p.build())
    if cfg.model == "linear-skew":
        return LinearSkewChart(p.lam, p.c)
    if cfg.model == "adler":
        return AdlerChart(p.delta, p.k, p.harmonic)
    raise ConfigError(f"model {cfg.model!r} has no phase chart")


def build_network(p) -> NetworkSpec:
    if p.preset == "two-block":
        net = two_block_network(p.intra, p.inter)
        if p.input_amplitudes:
            net = NetworkSpec(net.nodes, net.edges, net.input_gains,
                              InputSignal(tuple(p.input_amplitudes), tuple(p.input_frequencies)))
        return net
    nodes = tuple(PhaseNode(n.omega) if n.kind == "phase" else PoincareNode(n.omega, n.alpha, n.a) for n in p.nodes)
    edges = tuple(Edge(e.source, e.target, e.strength, tuple(e.harmonics)) for e in p.edges)
    gains = tuple(n.gain for n in p.nodes)
    return NetworkSpec(nodes, edges, gains, InputSignal(tuple(p.input_amplitudes), tuple(p.input_frequencies)))


def _graph_grid(chart, cfg: ExperimentConfig, forcing_grid: int):
    return (cfg.numerics.grid,) + (forcing_grid,) * len(chart.forcing_frequencies)


# --------------------------------------------------------------------------
# experiments; each returns (artifact paths, summary dict)


def exp_simulate(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    if cfg.model == "network":
        net = build_network(cfg.model_params())
        x0 = default_x0(cfg, net.dim_state) if o.x0 is None else np.asarray(o.x0, dtype=float)
        run = simulate_network(net, x0, num.horizon, num.tol, dt=o.dt, t0=o.t0)
        traj = run.trajectory
        extra = run.phases.phases
        extra_names = [f"theta{i}" for i in range(net.size)]
    else:
        sys_ = build_system(cfg)
        x0 = default_x0(cfg, sys_.dim_state) if o.x0 is None else np.asarray(o.x0, dtype=float)
        n = int(round(num.horizon / o.dt))
        times = o.t0 + o.dt * np.arange(n + 1)
        traj = integrate(sys_, x0, o.t0, float(times[-1]), num.tol, t_eval=times)
        extra = np.zeros((0, times.size))
        extra_names = []
    header = ["t"] + [f"x{i}" for i in range(traj.dim)] + extra_names
    rows = (
        [traj.times[k], *traj.states[k], *extra[:, k]] for k in range(traj.times.size)
    )
    path = write_csv(out / "trajectory.csv", header, rows)
    return [path], {"samples": int(traj.times.size), "final_state": traj.states[-1].tolist()}


def exp_graph(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    chart = build_chart(cfg)
    rho0 = initial_graph(chart, _graph_grid(chart, cfg, o.forcing_grid))
    rho, diag = solve_graph(rho0, chart, num.window, o.max_iter, num.tol)
    diagnostics = diag.as_dict()
    paths = list(write_graph(rho, out / "graph.csv"))
    if diag.converged:
        r = nh_rates(rho, chart, o.nh_samples, o.nh_horizon, seed=num.seed)
        diagnostics["nh_rates"] = {
            "lambda_N": r.lambda_N, "lambda_T_max": r.lambda_T_max, "ratio": r.ratio,
            "lambda_T_inst_max": r.lambda_T_inst_max, "samples": r.samples,
        }
        try:
            diagnostics["interpolation_error"] = rho.interpolation_error()
        except DomainError:
            # grid too coarse to subsample; the estimate is simply unavailable
            diagnostics["interpolation_error"] = None
    paths.append(write_json(out / "diagnostics.json", diagnostics))
    if not diag.converged:
        raise NumericalFailure(f"graph iteration ended with status {diag.status}", diagnostics)
    return paths, {"status": diag.status, "iterations": diag.iterations}


def exp_tongue(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    family = {"adler": AdlerFamily(), "poincare": ForcedPoincareFamily(), "network": PhasePairFamily()}[cfg.model]
    scan = arnold_tongue_scan(family, o.delta_range, o.k_range, o.resolution, num.horizon, tol=num.tol,
                              discard_fraction=o.discard_fraction, m_max=o.m_max, n_max=o.n_max, threads=threads)
    header = ["delta", "k", "m", "n", "residual", "rho_reference", "rho_oscillator", "rho_relative"]
    path = write_csv(out / "tongue.csv", header, scan.rows())
    return [path], {"points": int(scan.deltas.size * scan.ks.size), "locked": int(scan.locked.sum()),
                    "row_errors": scan.errors}


def exp_collapse(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    chart = build_chart(cfg)
    graph = None
    summary = {}
    if chart.n_normal:
        rho0 = initial_graph(chart, _graph_grid(chart, cfg, o.forcing_grid))
        graph, diag = solve_graph(rho0, chart, num.window, 20, num.tol)
        summary["graph_status"] = diag.status
        if not diag.converged:
            raise NumericalFailure("invariant graph did not converge", {"graph": diag.as_dict()})
    phi0 = o.phi0 if o.phi0 is not None else [0.0] * len(chart.forcing_frequencies)
    res = phase_collapse(chart, graph, (phi0, o.t0), o.K, num.horizon, offset=o.offset, gap=o.gap,
                         tol=min(num.tol, 1e-9))
    p1 = write_csv(out / "clusters.csv", ["cluster", "phase", "size"],
                   ([i, ph, sz] for i, (ph, sz) in enumerate(zip(res.cluster_phases, res.cluster_sizes))))
    p2 = write_csv(out / "final_phases.csv", ["index", "phase"], enumerate(np.mod(res.final_phases, 2 * math.pi)))
    summary["cluster_count"] = res.cluster_count
    return [p1, p2], summary


def exp_aggregate(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    p = cfg.model_params()
    net = build_network(p)
    x0 = np.asarray(p.x0, dtype=float) if p.x0 is not None else np.linspace(0.0, 2.0, net.dim_state)
    tree = aggregate(net, num.horizon, o.max_levels, x0=x0, tol=num.tol, dt=o.dt,
                     validation_horizon=o.validation_horizon, threshold=o.threshold)
    p1 = write_json(out / "tree.json", tree.as_dict())
    rows = []
    for lvl, lv in enumerate(tree.levels, start=1):
        for c, (members, osc) in enumerate(zip(lv.partition, lv.oscillators)):
            rows.append([lvl, c, " ".join(str(i) for i in members), osc.omega_hat, osc.input_response,
                         lv.validation_error, lv.validated])
    p2 = write_csv(out / "clusters.csv", ["level", "cluster", "members", "omega_hat", "input_response",
                                          "validation_error", "validated"], rows)
    return [p1, p2], {"levels": len(tree.levels), "final_partition": [list(c) for c in tree.levels[-1].partition]}


def exp_lyapunov(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    sys_ = build_system(cfg)
    x0 = default_x0(cfg, sys_.dim_state) if o.x0 is None else np.asarray(o.x0, dtype=float)
    ex = lyapunov_spectrum(sys_, x0, num.horizon, transient=o.transient, k=o.k,
                           renorm_interval=o.renorm_interval, tol=num.tol, seed=num.seed)
    path = write_csv(out / "exponents.csv", ["index", "exponent"], enumerate(ex))
    return [path], {"exponents": [float(v) for v in ex]}


def exp_coherence(cfg, out: Path, threads: int):
    o = cfg.experiment_options()
    num = cfg.numerics
    sys_ = build_system(cfg)
    x0 = default_x0(cfg, sys_.dim_state) if o.x0 is None else np.asarray(o.x0, dtype=float)
    if o.normal is not None:
        sec = SectionSpec(tuple(o.normal), o.offset, o.direction,
                          None if o.half_normal is None else tuple(o.half_normal), o.half_offset)
    elif sys_.dim_state == 3:
        sec = ROSSLER_SECTION
    else:
        sec = SectionSpec((0.0, 1.0), 0.0, "positive", (1.0, 0.0), 0.0)
    x = propagate(sys_.eval, x0, 0.0, o.transient, num.tol) if o.transient > 0 else x0
    traj = integrate(sys_, x, o.transient, o.transient + num.horizon, num.tol)
    tc, states = section_crossings(traj, sec)
    p1 = write_csv(out / "crossings.csv", ["t"] + [f"x{i}" for i in range(traj.dim)],
                   ([t, *s] for t, s in zip(tc, states)))
    rep = coherence(tc)
    p2 = write_csv(out / "coherence.csv", ["c", "spread", "coherence_index", "count"],
                   [[rep.c, rep.spread, rep.coherence_index, rep.count]])
    return [p1, p2], {"coherence_index": rep.coherence_index, "crossings": int(tc.size)}


EXPERIMENTS = {
    "simulate": exp_simulate,
    "graph": exp_graph,
    "tongue": exp_tongue,
    "collapse": exp_collapse,
    "aggregate": exp_aggregate,
    "lyapunov": exp_lyapunov,
    "coherence": exp_coherence,
}


# --------------------------------------------------------------------------
# commands


def _threads(cfg: ExperimentConfig, override: int | None) -> int:
    if override:
        return override
    if cfg.threads:
        return cfg.threads
    env = os.environ.get("NHSYNC_THREADS")
    if env and env.isdigit() and int(env) > 0:
        return int(env)
    return (os.cpu_count() or 1) if cfg.experiment == "tongue" else 1


def _apply_overrides(cfg: ExperimentConfig, output_dir: str | None, seed: int | None) -> ExperimentConfig:
    upd = {}
    if output_dir is not None:
        upd["output_dir"] = output_dir
    if seed is not None:
        upd["numerics"] = cfg.numerics.model_copy(update={"seed": seed})
    return cfg.model_copy(update=upd) if upd else cfg


def run(config_path, output_dir: str | None = None, threads: int | None = None, seed: int | None = None) -> int:
    try:
        cfg = load_config(config_path)
        if seed is not None and seed < 0:
            raise ConfigError("--seed must be non-negative")
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be positive")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _apply_overrides(cfg, output_dir, seed)
    n_threads = _threads(cfg, threads)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.normalized(),
        "library": "nhsync",
        "version": __version__,
        "seed": cfg.numerics.seed,
        "threads": n_threads,
        "command": f"nhsync run {Path(config_path).name}",
    }
    start = time.perf_counter()
    code = EXIT_OK
    try:
        paths, summary = EXPERIMENTS[cfg.experiment](cfg, out, n_threads)
        manifest["summary"] = summary
    except NumericalFailure as exc:
        write_json(out / "diagnostics.json", {"error": str(exc), **exc.diagnostics})
        paths, code = [out / "diagnostics.json"], EXIT_NUMERIC
        manifest["error"] = str(exc)
    except (NhsyncError, FloatingPointError, np.linalg.LinAlgError) as exc:
        write_json(out / "diagnostics.json", {
            "error": f"{type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc(),
        })
        paths, code = [out / "diagnostics.json"], EXIT_NUMERIC
        manifest["error"] = f"{type(exc).__name__}: {exc}"
    manifest["wall_time_s"] = time.perf_counter() - start
    manifest["exit_code"] = code
    manifest["artifacts"] = sorted({p.name for p in paths})
    write_json(out / "manifest.json", manifest)
    if code == EXIT_OK:
        print(f"wrote {len(paths)} artifact(s) to {out}")
    else:
        print(f"numerical failure: {manifest['error']} (see {out / 'diagnostics.json'})", file=sys.stderr)
    return code


def validate(config_path) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(cfg.normalized(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="nhsync", description="Run invariant-cylinder and synchronisation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir")
    p_run.add_argument("--threads", type=int)
    p_run.add_argument("--seed", type=int)
    p_val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "validate":
        return validate(args.config)
    return run(args.config, args.output_dir, args.threads, args.seed)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
