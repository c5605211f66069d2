"""Batch front end: runs, verification suites and mesh utilities.

Exit codes: 0 success, 1 a verification failed, 2 configuration or mesh
error, 3 the run diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RunConfig
from .core import check_alpha_passivity, make_probes, run_process, stability_bound
from .heat import HeatScheme, SchemeError, cycle_propagator_pair, energy_audit
from .hexmesh import BoundaryCondition, MeshError, build_structured_mesh, load_mesh, save_mesh
from .oracle import SlabProblem, slab_response

DIVERGENCE_LIMIT = 1e12
FLOAT_FORMAT = "%.17g"
DISPERSION_FO = (0.05, 2.0)
DISPERSION_TOL_ORTHOGONAL = 0.01
DISPERSION_TOL_SKEWED = 0.02
ASYMMETRY_TOL = 0.01


class DivergenceError(SchemeError):
    def __init__(self, cell: int, value: float, cycle: int, tau: float):
        super().__init__(
            f"divergence at cycle {cycle}: cell {cell} reached T_n = {value:.3e} K "
            f"(limit {DIVERGENCE_LIMIT:.0e} K); tau = {tau:.6g} s is likely above the stability limit"
        )
        self.cell = cell
        self.cycle = cycle


def _fmt(x: float) -> str:
    return FLOAT_FORMAT % x


def _check_divergence(T: np.ndarray, cycle: int, tau: float):
    bad = ~(np.abs(T) <= DIVERGENCE_LIMIT)
    if np.any(bad):
        cell = int(np.flatnonzero(bad)[0])
        raise DivergenceError(cell, float(T[cell]), cycle, tau)


# --- run -------------------------------------------------------------------

@dataclass
class RunResult:
    cells: int
    tau: float
    cycles: int
    probe_cells: list
    final_T: np.ndarray
    final_residual: float
    max_relative_residual: float
    csv_path: Path | None = None
    summary_path: Path | None = None
    config_path: Path | None = None

    def summary(self) -> dict:
        return {
            "cells": self.cells,
            "tau": self.tau,
            "cycles": self.cycles,
            "probe_cells": self.probe_cells,
            "final_energy_residual_J": self.final_residual,
            "max_relative_energy_residual": self.max_relative_residual,
        }


def run(config: RunConfig, *, write: bool = True) -> RunResult:
    """Run the scheme as configured; writes ``<prefix>.csv``, a summary and the effective config."""
    mesh = config.build_mesh()
    tau = config.resolve_tau(mesh)
    cycles = config.resolve_cycles(tau)
    probes = config.resolve_probes(mesh)
    sources = config.resolve_sources(mesh)
    scheme = HeatScheme(mesh)
    state = scheme.initial_state(config.initial_temperature, tau)
    cap = scheme.coef.capacity

    rows = []
    residual = 0.0
    worst = 0.0
    for _ in range(cycles):
        before = state.copy()
        scheme.cycle(state, sources)
        _check_divergence(state.T_n, state.cycles, tau)
        residual = energy_audit(scheme, before, state, sources)
        # every term of the balance counts towards the scale
        scale = float(np.dot(cap, np.abs(before.T_n)) + np.dot(cap, np.abs(state.T_n))) + tau * (
            float(np.abs(sources.at(before.time + tau / 2, mesh.n_cells)).sum()) + abs(scheme.boundary_current(state)))
        if residual != 0.0:
            worst = max(worst, abs(residual) / scale)
        t = _fmt(state.time)
        rows.extend((t, str(n), _fmt(state.T_n[c])) for n, c in enumerate(probes))

    result = RunResult(mesh.n_cells, tau, cycles, probes, state.T_n.copy(), residual, worst)
    if write:
        out = config.output_path()
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"{config.prefix}.csv"
        with open(result.csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "probe", "T_n_K"])
            w.writerows(rows)
        result.summary_path = out / f"{config.prefix}_summary.json"
        result.summary_path.write_text(json.dumps(result.summary(), indent=2) + "\n")
        result.config_path = out / f"{config.prefix}_effective.yaml"
        result.config_path.write_text(yaml.safe_dump(config.effective(tau, cycles), sort_keys=False))
    return result


# --- dispersion test -------------------------------------------------------

@dataclass
class DispersionTrace:
    direction: str
    fourier: np.ndarray
    simulated: np.ndarray
    analytic: np.ndarray

    @property
    def max_deviation(self) -> float:
        """Worst absolute deviation as a fraction of the step temperature."""
        return float(np.max(np.abs(self.simulated - self.analytic)))


@dataclass
class DispersionReport:
    traces: dict
    tolerance: float
    asymmetry: float | None = None
    passed: bool = False

    @property
    def max_deviation(self) -> float:
        return max(t.max_deviation for t in self.traces.values())

    def lines(self) -> list[str]:
        out = [f"{'PASS' if t.max_deviation <= self.tolerance else 'FAIL'} direction {d}: "
               f"max deviation {t.max_deviation:.3e} (tolerance {self.tolerance})"
               for d, t in self.traces.items()]
        if self.asymmetry is not None:
            ok = self.asymmetry <= ASYMMETRY_TOL
            out.append(f"{'PASS' if ok else 'FAIL'} horizontal vs vertical: {self.asymmetry:.3e} (tolerance {ASYMMETRY_TOL})")
        return out


_DIRECTIONS = {"h": ("x-", "x+", 0), "v": ("y-", "y+", 1)}


def _dispersion_trace(config: RunConfig, direction: str, skew: float | None) -> DispersionTrace:
    if config.mesh_generate is None:
        raise config.error("the dispersion test needs a generated mesh", "mesh")
    gen = dict(config.mesh_generate)
    if skew is not None:
        gen["jitter"] = float(skew)
        gen["planar_jitter"] = True
    heated, far, axis = _DIRECTIONS[direction]
    try:
        mesh = build_structured_mesh(gen.pop("nx"), gen.pop("ny"), gen.pop("nz"), material=config.material, **gen)
        mesh = mesh.with_boundary({heated: BoundaryCondition.fixed(1.0, 0.0)})
    except MeshError as exc:
        raise config.error(str(exc), "mesh") from None
    n = (config.mesh_generate["nx"], config.mesh_generate["ny"])[axis]
    spacing = float(config.mesh_generate.get("spacing", 1.0))
    problem = SlabProblem(L=n * spacing, alpha_diff=config.material.lambda_H / config.material.c_v)
    tau = config.resolve_tau(mesh)
    t_end = float(problem.time_at(DISPERSION_FO[1]))
    cycles = int(np.ceil(t_end / tau))
    probe = np.array(sorted({c for c, _ in mesh.side_faces(far)}))

    scheme = HeatScheme(mesh)
    state = scheme.initial_state(0.0, tau)
    times, values = [], []
    for _ in range(cycles):
        scheme.cycle(state)
        _check_divergence(state.T_n, state.cycles, tau)
        times.append(state.time)
        values.append(float(state.T_n[probe].mean()))
    times = np.array(times)
    fo = problem.fourier(times)
    keep = fo >= DISPERSION_FO[0]
    return DispersionTrace(direction, fo[keep], np.array(values)[keep], slab_response(problem, times[keep]))


def dispersion_test(config: RunConfig, direction: str | None = None, skew: float | None = None,
                    *, write: bool = True) -> DispersionReport:
    """Heaviside step on one side, mean temperature on the opposite side vs the slab solution.

    ``direction`` is ``"h"`` (heat flows along x), ``"v"`` (along y) or
    ``None`` for both, which also reports their asymmetry. ``skew`` replaces
    the generator's jitter with a planar jitter of that amplitude.
    """
    dirs = ["h", "v"] if direction is None else [direction]
    for d in dirs:
        if d not in _DIRECTIONS:
            raise ConfigError(f"direction must be 'h' or 'v', not {d!r}", "direction")
    jitter = skew if skew is not None else float(config.mesh_generate.get("jitter", 0.0)) if config.mesh_generate else 0.0
    tol = DISPERSION_TOL_ORTHOGONAL if jitter == 0 else DISPERSION_TOL_SKEWED
    traces = {d: _dispersion_trace(config, d, skew) for d in dirs}
    report = DispersionReport(traces, tol)
    if len(traces) == 2:
        h, v = traces["h"], traces["v"]
        m = min(len(h.simulated), len(v.simulated))
        report.asymmetry = float(np.max(np.abs(h.simulated[:m] - v.simulated[:m])))
    report.passed = report.max_deviation <= tol and (report.asymmetry is None or report.asymmetry <= ASYMMETRY_TOL)
    if write:
        out = config.output_path()
        out.mkdir(parents=True, exist_ok=True)
        for d, t in traces.items():
            with open(out / f"{config.prefix}_dispersion_{d}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["fourier", "T_mean_K", "T_analytic_K"])
                w.writerows((_fmt(a), _fmt(b), _fmt(c)) for a, b, c in zip(t.fourier, t.simulated, t.analytic))
    return report


# --- passivity sweep -------------------------------------------------------

@dataclass
class ProbeOutcome:
    name: str
    passive: bool
    margin: float
    bound: float
    peak: float

    @property
    def bounded(self) -> bool:
        return self.peak <= self.bound * (1 + 1e-12) + 1e-300

    @property
    def passed(self) -> bool:
        return self.passive and self.bounded


@dataclass
class PassivityReport:
    tau: float
    outcomes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    def lines(self) -> list[str]:
        return [f"{'PASS' if o.passed else 'FAIL'} {o.name}: passivity margin {o.margin:.3e}, "
                f"peak {o.peak:.6g} vs bound {o.bound:.6g}" for o in self.outcomes]


def _dirac_axes(nc: int) -> list[int]:
    dim = 4 * nc
    return sorted({0, nc // 2, nc - 1, nc, nc + 3 * (nc // 2) + 1, dim - 1})


def passivity_sweep(config: RunConfig, *, steps: int | None = None, n_random: int = 4,
                    seed: int = 0, tau: float | None = None) -> PassivityReport:
    """Stability harness on the configured mesh.

    Each probe is checked twice: the cycle map must not increase the
    running energy sums of the probe (falsification of passivity), and the
    process excited by the probe must stay within the uniform bound at
    every step after the excitation ends.
    """
    if config.sources:
        raise config.error("the passivity sweep needs a configuration without sources", "sources")
    mesh = config.build_mesh()
    tau = config.resolve_tau(mesh) if tau is None else float(tau)
    steps = config.resolve_cycles(tau) if steps is None else int(steps)
    scheme = HeatScheme(mesh)
    pair, alpha = cycle_propagator_pair(scheme, tau)
    nc = mesh.n_cells
    axes = _dirac_axes(nc)
    probes = make_probes(4 * nc, tau, n_random=n_random, dirac_axes=axes, seed=seed)
    names = [f"random {k}" for k in range(n_random)] + [f"dirac axis {a}" for a in axes]

    report = PassivityReport(tau)
    for name, e in zip(names, probes):
        check = check_alpha_passivity(pair.F_R, alpha, [e])
        traj = run_process(pair, e, steps)
        g = traj.on_I()
        N = len(e)
        bound = stability_bound(alpha, e, g[:N])
        after = g[N:]
        peak = float(np.max(np.linalg.norm(after, axis=1))) if len(after) else 0.0
        if not np.isfinite(peak):
            peak = float("inf")
        report.outcomes.append(ProbeOutcome(name, check.passive, check.worst_margin, bound, peak))
    return report


# --- command line ----------------------------------------------------------

def _cmd_run(args) -> int:
    res = run(RunConfig.load(args.config))
    print(f"ran {res.cycles} cycles on {res.cells} cells, tau = {res.tau:.6g} s; "
          f"final energy residual {res.final_residual:.3e} J")
    print(f"wrote {res.csv_path}")
    return 0


def _cmd_dispersion(args) -> int:
    report = dispersion_test(RunConfig.load(args.config), args.direction, args.skew)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def _cmd_passivity(args) -> int:
    report = passivity_sweep(RunConfig.load(args.config), steps=args.steps)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def _cmd_mesh_gen(args) -> int:
    shear = None
    if args.shear:
        shear = np.eye(3)
        shear[0, 1] = args.shear
    mesh = build_structured_mesh(args.nx, args.ny, args.nz, args.spacing, shear=shear,
                                 jitter=args.jitter, planar_jitter=args.planar, seed=args.seed)
    save_mesh(mesh, args.output)
    print(f"wrote {mesh.n_cells} cells to {args.output}")
    return 0


def _cmd_mesh_validate(args) -> int:
    mesh = load_mesh(args.path)
    vols = np.array([c.volume for c in mesh.cells])
    print(f"{args.path}: {mesh.n_cells} cells, {len(mesh.links)} links, "
          f"{len(mesh.boundary)} outer faces, volume range [{vols.min():.6g}, {vols.max():.6g}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dscheme", description="DSC heat conduction on hexahedral meshes")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured simulation")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("dispersion-test", help="step response against the analytic slab solution")
    d.add_argument("config")
    d.add_argument("--direction", choices=["h", "v"], default=None, help="default: both")
    d.add_argument("--skew", type=float, default=None, help="planar jitter amplitude (fraction of spacing)")
    d.set_defaults(func=_cmd_dispersion)

    s = sub.add_parser("passivity-sweep", help="stability harness on the configured mesh")
    s.add_argument("config")
    s.add_argument("--steps", type=int, default=None, help="cycles per excitation (default: config)")
    s.set_defaults(func=_cmd_passivity)

    m = sub.add_parser("mesh", help="mesh utilities")
    msub = m.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", help="write a structured mesh")
    g.add_argument("nx", type=int)
    g.add_argument("ny", type=int)
    g.add_argument("nz", type=int)
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--spacing", type=float, default=1.0)
    g.add_argument("--jitter", type=float, default=0.0)
    g.add_argument("--planar", action="store_true", help="jitter x and y only, same in every layer")
    g.add_argument("--shear", type=float, default=0.0, help="x += shear * y")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_mesh_gen)
    v = msub.add_parser("validate", help="load and check a mesh file")
    v.add_argument("path")
    v.set_defaults(func=_cmd_mesh_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, MeshError, SchemeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
