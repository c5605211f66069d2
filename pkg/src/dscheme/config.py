"""Run configuration: YAML schema, validation and resolution.

A configuration is a mapping with these sections (see README for a full
example)::

    mesh:        {generate: {nx, ny, nz, spacing, shear, jitter, planar_jitter, seed}}
                 or {file: path}
    material:    {lambda_H, c_v}
    time:        {tau: number | "auto", safety: 0.5, cycles: n} or {..., total_time: s}
    initial_temperature: K
    boundary:    {side: "adiabatic" | {fixed: T, onset: s}}
    sources:     [{cells: [..] | "all", power: W} | {cells: .., dielectric: {sigma, U}}]
    probes:      [{cell: n} | {position: [x, y, z]}, ...]
    output:      {dir: path, prefix: name}

Errors raise :class:`ConfigError` naming the configuration file and field.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .hexmesh import SIDE_NAMES, BoundaryCondition, Material, Mesh, MeshError, build_structured_mesh, load_mesh
from .heat import CellSource, dielectric_source, stable_timestep

OUTPUT_ENV = "DSCHEME_OUTPUT_DIR"

_GENERATOR_KEYS = {"nx", "ny", "nz", "spacing", "shear", "jitter", "planar_jitter", "seed"}


class ConfigError(ValueError):
    def __init__(self, message: str, field_name: str | None = None, source: str | None = None):
        where = ":".join(x for x in (source, field_name) if x)
        super().__init__(f"{where}: {message}" if where else message)
        self.field_name = field_name
        self.source = source


@dataclass
class SourceSpec:
    cells: object = "all"
    power: float | None = None
    sigma: float | None = None
    U: list | None = None


@dataclass
class ProbeSpec:
    cell: int | None = None
    position: list | None = None


@dataclass
class RunConfig:
    mesh_generate: dict | None = None
    mesh_file: str | None = None
    material: Material = field(default_factory=Material)
    tau: object = "auto"
    safety: float = 0.5
    cycles: int | None = None
    total_time: float | None = None
    initial_temperature: float = 0.0
    boundary: dict = field(default_factory=dict)
    sources: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    output_dir: str = "output"
    prefix: str = "run"
    source: str | None = None
    base_dir: str = "."

    # -- parsing ------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, source: str | None = None, base_dir: str = ".") -> RunConfig:
        def err(msg, fld):
            return ConfigError(msg, fld, source)

        if not isinstance(data, dict):
            raise err("top level must be a mapping", None)
        known = {"mesh", "material", "time", "initial_temperature", "boundary", "sources", "probes", "output"}
        for key in data:
            if key not in known:
                raise err(f"unknown section {key!r}", key)
        cfg = cls(source=source, base_dir=base_dir)

        mesh = data.get("mesh")
        if not isinstance(mesh, dict):
            raise err("a mesh section is required", "mesh")
        has_gen, has_file = "generate" in mesh, "file" in mesh
        if has_gen == has_file:
            raise err("give exactly one of mesh.generate or mesh.file", "mesh")
        if has_gen:
            gen = mesh["generate"]
            if not isinstance(gen, dict):
                raise err("must be a mapping", "mesh.generate")
            bad = set(gen) - _GENERATOR_KEYS
            if bad:
                raise err(f"unknown keys {sorted(bad)}", "mesh.generate")
            for k in ("nx", "ny", "nz"):
                if not isinstance(gen.get(k), int) or gen[k] < 1:
                    raise err("must be a positive integer", f"mesh.generate.{k}")
            cfg.mesh_generate = dict(gen)
        else:
            if not isinstance(mesh["file"], str):
                raise err("must be a path", "mesh.file")
            cfg.mesh_file = mesh["file"]

        mat = data.get("material", {}) or {}
        try:
            cfg.material = Material(float(mat.get("lambda_H", 1.0)), float(mat.get("c_v", 1.0)))
        except (TypeError, ValueError) as exc:
            raise err(str(exc), "material") from None

        time = data.get("time")
        if not isinstance(time, dict):
            raise err("a time section is required", "time")
        tau = time.get("tau", "auto")
        if tau != "auto":
            if not _is_number(tau) or not tau > 0 or not math.isfinite(tau):
                raise err("must be a positive number or 'auto'", "time.tau")
            tau = float(tau)
        cfg.tau = tau
        safety = time.get("safety", 0.5)
        if not _is_number(safety) or not safety > 0:
            raise err("must be a positive number", "time.safety")
        cfg.safety = float(safety)
        if ("cycles" in time) == ("total_time" in time):
            raise err("give exactly one of time.cycles or time.total_time", "time")
        if "cycles" in time:
            if not isinstance(time["cycles"], int) or time["cycles"] < 0:
                raise err("must be a non-negative integer", "time.cycles")
            cfg.cycles = time["cycles"]
        else:
            if not _is_number(time["total_time"]) or time["total_time"] < 0:
                raise err("must be a non-negative number", "time.total_time")
            cfg.total_time = float(time["total_time"])

        T0 = data.get("initial_temperature", 0.0)
        if not _is_number(T0) or not math.isfinite(T0):
            raise err("must be a number", "initial_temperature")
        cfg.initial_temperature = float(T0)

        for side, spec in (data.get("boundary") or {}).items():
            fld = f"boundary.{side}"
            if side not in SIDE_NAMES:
                raise err(f"unknown side; expected one of {list(SIDE_NAMES)}", fld)
            cfg.boundary[side] = _parse_boundary(spec, lambda m: err(m, fld))

        for n, spec in enumerate(data.get("sources") or []):
            cfg.sources.append(_parse_source(spec, lambda m, sub="": err(m, f"sources[{n}]{sub}")))

        for n, spec in enumerate(data.get("probes") or []):
            fld = f"probes[{n}]"
            if not isinstance(spec, dict) or len(spec) != 1 or not ({"cell", "position"} & set(spec)):
                raise err("probe needs exactly one of 'cell' or 'position'", fld)
            if "cell" in spec:
                if not isinstance(spec["cell"], int) or spec["cell"] < 0:
                    raise err("cell index must be a non-negative integer", fld)
                cfg.probes.append(ProbeSpec(cell=spec["cell"]))
            else:
                pos = spec["position"]
                if not (isinstance(pos, list) and len(pos) == 3 and all(_is_number(x) for x in pos)):
                    raise err("position must be three numbers", fld)
                cfg.probes.append(ProbeSpec(position=[float(x) for x in pos]))

        out = data.get("output") or {}
        cfg.output_dir = str(out.get("dir", "output"))
        cfg.prefix = str(out.get("prefix", "run"))
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc.strerror}", None, str(path)) from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}", None, str(path)) from None
        return cls.from_dict(data, source=str(path), base_dir=str(path.parent))

    # -- resolution ---------------------------------------------------------

    def error(self, message: str, field_name: str | None = None) -> ConfigError:
        return ConfigError(message, field_name, self.source)

    def build_mesh(self) -> Mesh:
        """Generated or loaded mesh with material and boundary applied."""
        try:
            if self.mesh_generate is not None:
                gen = dict(self.mesh_generate)
                mesh = build_structured_mesh(gen.pop("nx"), gen.pop("ny"), gen.pop("nz"),
                                             material=self.material, **gen)
            else:
                path = Path(self.base_dir) / self.mesh_file
                mesh = load_mesh(path)
                mesh = mesh.with_materials([self.material] * mesh.n_cells)
        except MeshError as exc:
            raise self.error(str(exc), "mesh") from None
        except OSError as exc:
            raise self.error(f"cannot read mesh file: {exc.strerror}", "mesh.file") from None
        except TypeError as exc:
            raise self.error(str(exc), "mesh.generate") from None
        if self.boundary:
            try:
                mesh = mesh.with_boundary(self.boundary)
            except MeshError as exc:
                raise self.error(str(exc), "boundary") from None
        return mesh

    def resolve_tau(self, mesh: Mesh) -> float:
        tau = stable_timestep(mesh, safety=self.safety) if self.tau == "auto" else float(self.tau)
        if not tau > 0:
            raise self.error(f"time step resolved to {tau}; must be positive", "time.tau")
        return tau

    def resolve_cycles(self, tau: float) -> int:
        if self.cycles is not None:
            return self.cycles
        return int(round(self.total_time / tau))

    def resolve_probes(self, mesh: Mesh) -> list[int]:
        """Cell index per probe; positions go to the nearest node point, lowest index on ties."""
        points = mesh.node_points()
        cells = []
        for n, p in enumerate(self.probes):
            if p.cell is not None:
                if p.cell >= mesh.n_cells:
                    raise self.error(f"cell {p.cell} does not exist (mesh has {mesh.n_cells})", f"probes[{n}]")
                cells.append(p.cell)
            else:
                d = np.linalg.norm(points - np.asarray(p.position), axis=1)
                cells.append(int(np.argmin(d)))
        return cells

    def resolve_sources(self, mesh: Mesh) -> CellSource:
        if not self.sources:
            return CellSource()
        power = np.zeros(mesh.n_cells)
        for n, spec in enumerate(self.sources):
            if spec.cells == "all":
                cells = range(mesh.n_cells)
            else:
                cells = spec.cells
                bad = [c for c in cells if not 0 <= c < mesh.n_cells]
                if bad:
                    raise self.error(f"cell {bad[0]} does not exist", f"sources[{n}].cells")
            for c in cells:
                if spec.power is not None:
                    power[c] += spec.power
                else:
                    power[c] += dielectric_source(mesh.cells[c], spec.sigma, spec.U)
        return CellSource(power)

    def output_path(self) -> Path:
        override = os.environ.get(OUTPUT_ENV)
        if override:
            return Path(override)
        return Path(self.base_dir) / self.output_dir

    def effective(self, tau: float, cycles: int) -> dict:
        """Plain mapping of this configuration with the time step and count resolved."""
        data = {
            "mesh": {"generate": dict(self.mesh_generate)} if self.mesh_generate is not None
            else {"file": str((Path(self.base_dir) / self.mesh_file).resolve())},
            "material": {"lambda_H": self.material.lambda_H, "c_v": self.material.c_v},
            "time": {"tau": float(tau), "cycles": int(cycles)},
            "initial_temperature": self.initial_temperature,
            "boundary": {side: _dump_boundary(bc) for side, bc in self.boundary.items()},
            "sources": [_dump_source(s) for s in self.sources],
            "probes": [{"cell": p.cell} if p.cell is not None else {"position": list(p.position)}
                       for p in self.probes],
            "output": {"dir": self.output_dir, "prefix": self.prefix},
        }
        return data


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _parse_boundary(spec, err) -> BoundaryCondition:
    if spec == "adiabatic":
        return BoundaryCondition()
    if isinstance(spec, dict) and "fixed" in spec and set(spec) <= {"fixed", "onset"}:
        T, onset = spec["fixed"], spec.get("onset", 0.0)
        if not (_is_number(T) and _is_number(onset)):
            raise err("fixed temperature and onset must be numbers")
        try:
            return BoundaryCondition.fixed(T, onset)
        except MeshError as exc:
            raise err(str(exc)) from None
    raise err("expected 'adiabatic' or {fixed: T, onset: t}")


def _parse_complex(x):
    if _is_number(x):
        return complex(x)
    if isinstance(x, list) and len(x) == 2 and all(_is_number(v) for v in x):
        return complex(x[0], x[1])
    raise TypeError


def _parse_source(spec, err) -> SourceSpec:
    if not isinstance(spec, dict):
        raise err("source must be a mapping")
    cells = spec.get("cells", "all")
    if cells != "all" and not (isinstance(cells, list) and all(isinstance(c, int) for c in cells)):
        raise err("cells must be 'all' or a list of indices", ".cells")
    if ("power" in spec) == ("dielectric" in spec):
        raise err("give exactly one of power or dielectric")
    if "power" in spec:
        if not _is_number(spec["power"]) or not math.isfinite(spec["power"]):
            raise err("must be a number", ".power")
        return SourceSpec(cells=cells, power=float(spec["power"]))
    d = spec["dielectric"]
    if not isinstance(d, dict) or not _is_number(d.get("sigma")) or d["sigma"] < 0:
        raise err("sigma must be a non-negative number", ".dielectric.sigma")
    try:
        U = [_parse_complex(u) for u in d.get("U")]
        if len(U) != 3:
            raise TypeError
    except TypeError:
        raise err("U must list three values, each a number or [re, im]", ".dielectric.U") from None
    return SourceSpec(cells=cells, sigma=float(d["sigma"]), U=U)


def _dump_boundary(bc: BoundaryCondition):
    if bc.kind == "adiabatic":
        return "adiabatic"
    return {"fixed": bc.T_fix, "onset": bc.onset}


def _dump_source(s: SourceSpec) -> dict:
    out = {"cells": s.cells}
    if s.power is not None:
        out["power"] = s.power
    else:
        out["dielectric"] = {"sigma": s.sigma, "U": [[u.real, u.imag] for u in s.U]}
    return out
