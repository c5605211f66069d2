"""Hexahedral cell geometry, structured mesh generation and a text mesh format.

Corner numbering
----------------
The eight corners of a cell are addressed by local coordinate bits
``(i, j, k)``; corner ``i + 2*j + 4*k`` sits at the ``i`` side along local
direction 0, the ``j`` side along direction 1 and the ``k`` side along
direction 2.

Edge numbering
--------------
Edges ``4*mu .. 4*mu + 3`` run along local direction ``mu``, each oriented
from its 0-bit corner to its 1-bit corner. Within a family the four edges
go once around the axis, so that the node vector ``b_mu`` is the mean edge
along ``mu`` and the face-vector rule picks edges that lie on face ``iota``.

Faces
-----
Face ``2*mu`` is the low side and ``2*mu + 1`` the high side along local
direction ``mu``. Face vectors come out pointing away from the cell, which
makes ``lambda_H * f . grad(T)`` the heat current *into* the cell.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

# (start corner, end corner) for each of the 12 edges
EDGE_CORNERS = (
    # direction 0, (j, k) = (0,0) (1,0) (1,1) (0,1)
    (0, 1), (2, 3), (6, 7), (4, 5),
    # direction 1, (i, k) = (0,0) (0,1) (1,1) (1,0)
    (0, 2), (4, 6), (5, 7), (1, 3),
    # direction 2, (i, j) = (0,0) (1,0) (1,1) (0,1)
    (0, 4), (1, 5), (3, 7), (2, 6),
)

# corners on each face, listed as a closed loop
FACE_CORNERS = (
    (0, 2, 6, 4),
    (1, 3, 7, 5),
    (0, 1, 5, 4),
    (2, 3, 7, 6),
    (0, 1, 3, 2),
    (4, 5, 7, 6),
)

FACE_SIGN = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
FACE_AXIS = np.array([0, 0, 1, 1, 2, 2])

SIDE_NAMES = ("x-", "x+", "y-", "y+", "z-", "z+")

DEGENERACY_FACTOR = 1e-10
CONFORMITY_TOL = 1e-9


class MeshError(ValueError):
    """Invalid cell geometry or mesh connectivity."""


class MeshFormatError(MeshError):
    """Malformed mesh file; ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def _face_edge_indices(iota: int) -> tuple[int, int, int, int]:
    sign = 1 if iota % 2 == 0 else -1
    return (
        (8 + 2 * iota) % 12,
        (9 + 2 * (iota + sign)) % 12,
        (4 + 2 * iota) % 12,
        (5 + 2 * iota) % 12,
    )


FACE_EDGES = tuple(_face_edge_indices(i) for i in range(6))


def edge_vectors(vertices: np.ndarray) -> np.ndarray:
    """Edge vectors ``e_nu`` (12, 3) of a cell given its (8, 3) corners."""
    v = np.asarray(vertices, dtype=float)
    start = [a for a, _ in EDGE_CORNERS]
    end = [b for _, b in EDGE_CORNERS]
    return v[end] - v[start]


def node_vectors(edges: np.ndarray) -> np.ndarray:
    """Node vectors ``b_mu = (1/4) sum_nu e_(4 mu + nu)``, shape (3, 3)."""
    return 0.25 * edges.reshape(3, 4, 3).sum(axis=1)


def face_vectors(edges: np.ndarray) -> np.ndarray:
    """Face vectors ``f_iota`` (6, 3) from the wedge-product rule."""
    out = np.empty((6, 3))
    for iota, (a, b, c, d) in enumerate(FACE_EDGES):
        out[iota] = FACE_SIGN[iota] / 4.0 * np.cross(edges[a] + edges[b], edges[c] + edges[d])
    return out


# Six tetrahedra sharing the main diagonal 0-7; the sign is the parity of
# the axis order walked along the path 0 -> a -> b -> 7.
_TETS_6 = ((1, 3, 1.0), (1, 5, -1.0), (2, 3, -1.0), (2, 6, 1.0), (4, 5, 1.0), (4, 6, -1.0))
# corner tetrahedra plus the central one
_TETS_5 = ((1, 0, 3, 5), (2, 0, 6, 3), (4, 0, 5, 6), (7, 3, 6, 5), (0, 3, 5, 6))


def _triple(a, b, c) -> float:
    return float(np.dot(a, np.cross(b, c)))


def hex_volume(vertices: np.ndarray) -> float:
    """Volume from the six-tetrahedron decomposition around the 0-7 diagonal."""
    v = np.asarray(vertices, dtype=float)
    total = 0.0
    for a, b, sign in _TETS_6:
        total += sign * _triple(v[a] - v[0], v[b] - v[a], v[7] - v[b])
    return total / 6.0


def hex_volume_5tet(vertices: np.ndarray) -> float:
    """Five-tetrahedron volume; agrees with :func:`hex_volume` for planar faces."""
    v = np.asarray(vertices, dtype=float)
    total = 0.0
    for p, q, r, s in _TETS_5:
        total += abs(_triple(v[q] - v[p], v[r] - v[p], v[s] - v[p]))
    return total / 6.0


@dataclass(frozen=True)
class Material:
    lambda_H: float = 1.0  # W/m/K
    c_v: float = 1.0  # J/m^3/K

    def __post_init__(self):
        if not (self.lambda_H > 0 and self.c_v > 0):
            raise MeshError(f"material constants must be positive, got {self}")


@dataclass(frozen=True, eq=False)
class HexCell:
    """Geometry of one hexahedral cell.

    ``beta[nu, mu]`` is component ``nu`` of node vector ``b_mu`` (the node
    vectors are its columns) and ``gamma = inv(beta.T)``, so for any vector
    ``a`` the global coordinates are ``gamma @ (b @ a)``.
    """

    vertices: np.ndarray
    edges: np.ndarray
    b: np.ndarray
    f: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    volume: float
    material: Material

    @property
    def node_point(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def face_centers(self) -> np.ndarray:
        return self.vertices[np.array(FACE_CORNERS)].mean(axis=1)


def cell_from_vertices(vertices, material: Material | None = None) -> HexCell:
    """Build a :class:`HexCell`, rejecting degenerate or inverted corners."""
    v = np.array(vertices, dtype=float)
    if v.shape != (8, 3):
        raise MeshError(f"expected 8 corner positions of dimension 3, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise MeshError("corner coordinates must be finite")
    material = material or Material()

    e = edge_vectors(v)
    lengths = np.linalg.norm(e, axis=1)
    shortest = int(np.argmin(lengths))
    mean_len = float(lengths.mean())
    if lengths[shortest] <= 1e-12 * max(mean_len, 1e-300):
        raise MeshError(f"degenerate cell: edge {shortest} has zero length")

    b = node_vectors(e)
    f = face_vectors(e)
    beta = b.T.copy()
    det = float(np.linalg.det(beta))
    if abs(det) < DEGENERACY_FACTOR * mean_len**3:
        raise MeshError(
            f"degenerate cell: node vectors nearly coplanar (det beta = {det:.3e}, "
            f"threshold {DEGENERACY_FACTOR * mean_len**3:.3e})"
        )

    vol = hex_volume(v)
    # outward face vectors point from the node point towards the face centre
    offsets = v[np.array(FACE_CORNERS)].mean(axis=1) - v.mean(axis=0)
    facing = np.einsum("ij,ij->i", f, offsets)
    if vol <= 0 or det <= 0 or np.any(facing <= 0):
        bad = int(np.argmin(facing))
        raise MeshError(
            f"degenerate or inverted cell (volume {vol:.3e}, det beta {det:.3e}): "
            f"face {bad} is folded over"
        )

    gamma = np.linalg.inv(beta.T)
    return HexCell(
        vertices=v, edges=e, b=b, f=f, beta=beta, gamma=gamma, volume=vol, material=material
    )


def volume(cell: HexCell) -> float:
    """Cell volume in cubic meters (six-tetrahedron decomposition)."""
    vol = hex_volume(cell.vertices)
    if vol <= 0:
        raise MeshError(f"degenerate cell: non-positive volume {vol}")
    return vol


@dataclass(frozen=True)
class BoundaryCondition:
    """Thermal condition on an outer face.

    A fixed-temperature face behaves adiabatically before ``onset``.
    """

    kind: str = "adiabatic"
    T_fix: float = 0.0
    onset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("adiabatic", "fixed"):
            raise MeshError(f"unknown boundary kind {self.kind!r}")
        if self.onset < 0:
            raise MeshError("fixed-temperature onset must be >= 0")
        if not (np.isfinite(self.T_fix) and np.isfinite(self.onset)):
            raise MeshError("boundary values must be finite")

    @classmethod
    def fixed(cls, T_fix: float, onset: float = 0.0) -> BoundaryCondition:
        return cls("fixed", float(T_fix), float(onset))

    def is_fixed_at(self, t: float) -> bool:
        return self.kind == "fixed" and t >= self.onset


ADIABATIC = BoundaryCondition()


@dataclass(frozen=True, eq=False)
class Mesh:
    """Cells over a shared vertex table, interior links and outer-face tags.

    ``links`` rows are ``(zeta, iota, chi, kappa)``: face ``iota`` of cell
    ``zeta`` coincides with face ``kappa`` of cell ``chi``. ``boundary`` maps
    ``(cell, face)`` to its :class:`BoundaryCondition`. Construction
    validates that every face is covered exactly once and that linked faces
    share their corner positions.
    """

    vertices: np.ndarray
    corners: np.ndarray
    materials: tuple[Material, ...]
    links: np.ndarray
    boundary: dict
    cells: tuple[HexCell, ...] = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        corners = np.asarray(self.corners, dtype=np.int64).reshape(-1, 8)
        links = np.asarray(self.links, dtype=np.int64).reshape(-1, 4)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "materials", tuple(self.materials))
        object.__setattr__(self, "boundary", dict(self.boundary))
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertex table must have shape (n, 3)")
        if len(self.materials) != len(corners):
            raise MeshError("one material per cell required")
        if corners.size and (corners.min() < 0 or corners.max() >= len(vertices)):
            raise MeshError("cell corner index out of range")

        cells = []
        for n, (idx, mat) in enumerate(zip(corners, self.materials)):
            try:
                cells.append(cell_from_vertices(vertices[idx], mat))
            except MeshError as exc:
                raise MeshError(f"cell {n}: {exc}") from None
        object.__setattr__(self, "cells", tuple(cells))
        self._check_coverage()

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def _check_coverage(self):
        nc = self.n_cells
        owner: dict[tuple[int, int], str] = {}

        def claim(cell, face, what):
            key = (int(cell), int(face))
            if key in owner:
                raise MeshError(f"face {key} assigned twice: {owner[key]} and {what}")
            owner[key] = what

        for row in self.links:
            zeta, iota, chi, kappa = (int(x) for x in row)
            what = f"link ({zeta}, {iota}, {chi}, {kappa})"
            if not (0 <= zeta < nc and 0 <= chi < nc and 0 <= iota < 6 and 0 <= kappa < 6):
                raise MeshError(f"dangling {what}: no such cell or face")
            if zeta == chi:
                raise MeshError(f"{what} joins a cell to itself")
            a = self.face_corner_positions(zeta, iota)
            b = self.face_corner_positions(chi, kappa)
            if not _same_point_set(a, b, CONFORMITY_TOL):
                raise MeshError(f"non-conforming {what}: faces do not share corner positions")
            claim(zeta, iota, what)
            claim(chi, kappa, what)
        for (cell, face), bc in self.boundary.items():
            if not (0 <= cell < nc and 0 <= face < 6):
                raise MeshError(f"boundary entry ({cell}, {face}) names no such cell or face")
            if not isinstance(bc, BoundaryCondition):
                raise MeshError(f"boundary entry ({cell}, {face}) is not a BoundaryCondition")
            claim(cell, face, f"boundary ({cell}, {face})")
        missing = [(c, f) for c in range(nc) for f in range(6) if (c, f) not in owner]
        if missing:
            raise MeshError(f"{len(missing)} faces neither linked nor tagged, first {missing[0]}")

    def face_corner_positions(self, cell: int, face: int) -> np.ndarray:
        return self.vertices[self.corners[cell][list(FACE_CORNERS[face])]]

    def node_points(self) -> np.ndarray:
        return self.vertices[self.corners].mean(axis=1)

    def boundary_side(self, cell: int, face: int) -> str:
        """Box side (``x-`` .. ``z+``) of an outer face, from its outward normal."""
        f = self.cells[cell].f[face]
        axis = int(np.argmax(np.abs(f)))
        return SIDE_NAMES[2 * axis + (1 if f[axis] > 0 else 0)]

    def side_faces(self, side: str) -> list[tuple[int, int]]:
        if side not in SIDE_NAMES:
            raise MeshError(f"unknown side selector {side!r}; expected one of {SIDE_NAMES}")
        return sorted(k for k in self.boundary if self.boundary_side(*k) == side)

    def with_boundary(self, assignments: dict) -> Mesh:
        """Copy with boundary conditions replaced per side (or per ``(cell, face)``)."""
        boundary = dict(self.boundary)
        for key, bc in assignments.items():
            faces = self.side_faces(key) if isinstance(key, str) else [tuple(key)]
            for cf in faces:
                if cf not in boundary:
                    raise MeshError(f"{cf} is not an outer face")
                boundary[cf] = bc
        return Mesh(self.vertices, self.corners, self.materials, self.links, boundary)

    def with_materials(self, materials: Iterable[Material]) -> Mesh:
        return Mesh(self.vertices, self.corners, tuple(materials), self.links, self.boundary)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.corners, other.corners)
            and self.materials == other.materials
            and np.array_equal(self.links, other.links)
            and self.boundary == other.boundary
        )

    __hash__ = None


def _same_point_set(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    used = set()
    for p in a:
        d = np.linalg.norm(b - p, axis=1)
        hits = [i for i in np.flatnonzero(d <= tol) if i not in used]
        if not hits:
            return False
        used.add(hits[0])
    return True


def build_structured_mesh(
    nx: int,
    ny: int,
    nz: int,
    spacing: float = 1.0,
    *,
    shear=None,
    jitter: float = 0.0,
    planar_jitter: bool = False,
    seed: int | None = 0,
    material: Material | None = None,
) -> Mesh:
    """Logically Cartesian ``nx * ny * nz`` mesh with all outer faces adiabatic.

    Args:
        spacing: edge length of the undistorted cells.
        shear: optional 3x3 matrix applied to every vertex position
            (e.g. ``[[1, 0.3, 0], [0, 1, 0], [0, 0, 1]]`` for x -> x + 0.3 y).
        jitter: maximum displacement of interior vertices, as a fraction of
            ``spacing``. A coordinate is only perturbed where the vertex is
            interior along that axis, so the outer box stays flat.
        planar_jitter: perturb only x and y, identically in every z layer,
            which keeps the cells extruded prisms.
    """
    if min(nx, ny, nz) < 1:
        raise MeshError("cell counts must be >= 1")
    if spacing <= 0:
        raise MeshError("spacing must be positive")
    if not 0 <= jitter < 0.5:
        raise MeshError("jitter must lie in [0, 0.5)")
    material = material or Material()

    i, j, k = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    idx = np.stack([i, j, k], axis=-1).reshape(-1, 3)
    counts = np.array([nx, ny, nz])
    pos = idx.astype(float) * spacing

    if jitter > 0:
        rng = np.random.default_rng(seed)
        interior = (idx > 0) & (idx < counts)
        if planar_jitter:
            column = rng.uniform(-1.0, 1.0, size=(nx + 1, ny + 1, 2))
            delta = np.zeros_like(pos)
            delta[:, :2] = column[idx[:, 0], idx[:, 1]]
            interior[:, 2] = False
        else:
            delta = rng.uniform(-1.0, 1.0, size=pos.shape)
        pos = pos + np.where(interior, delta, 0.0) * jitter * spacing
    if shear is not None:
        pos = pos @ np.asarray(shear, dtype=float).T

    def vid(a, b, c):
        return (a * (ny + 1) + b) * (nz + 1) + c

    def cid(a, b, c):
        return a + nx * (b + ny * c)

    corners = np.empty((nx * ny * nz, 8), dtype=np.int64)
    for c in range(nz):
        for b in range(ny):
            for a in range(nx):
                corners[cid(a, b, c)] = [
                    vid(a + di, b + dj, c + dk)
                    for dk in (0, 1) for dj in (0, 1) for di in (0, 1)
                ]

    links = []
    boundary = {}
    for c in range(nz):
        for b in range(ny):
            for a in range(nx):
                here = cid(a, b, c)
                for axis, (n, step) in enumerate(((a, (1, 0, 0)), (b, (0, 1, 0)), (c, (0, 0, 1)))):
                    if n == 0:
                        boundary[(here, 2 * axis)] = ADIABATIC
                    if n == counts[axis] - 1:
                        boundary[(here, 2 * axis + 1)] = ADIABATIC
                    else:
                        there = cid(a + step[0], b + step[1], c + step[2])
                        links.append((here, 2 * axis + 1, there, 2 * axis))
    return Mesh(pos, corners, (material,) * len(corners), np.array(links).reshape(-1, 4), boundary)


# --- text format -----------------------------------------------------------

FORMAT_HEADER = "dscheme-hexmesh 1"


def _num(x: float) -> str:
    return repr(float(x))


def save_mesh(mesh: Mesh, sink) -> None:
    """Write ``mesh`` to a path or text stream in the line-oriented format."""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w") as fh:
            save_mesh(mesh, fh)
        return
    w = sink.write
    w(FORMAT_HEADER + "\n")
    w(f"vertices {len(mesh.vertices)}\n")
    for p in mesh.vertices:
        w(" ".join(_num(x) for x in p) + "\n")
    w(f"cells {mesh.n_cells}\n")
    for idx, mat in zip(mesh.corners, mesh.materials):
        w(" ".join(str(int(x)) for x in idx) + f" {_num(mat.lambda_H)} {_num(mat.c_v)}\n")
    w(f"links {len(mesh.links)}\n")
    for row in mesh.links:
        w(" ".join(str(int(x)) for x in row) + "\n")
    w(f"boundary {len(mesh.boundary)}\n")
    for (cell, face), bc in sorted(mesh.boundary.items()):
        if bc.kind == "fixed":
            w(f"{cell} {face} fixed {_num(bc.T_fix)} {_num(bc.onset)}\n")
        else:
            w(f"{cell} {face} adiabatic\n")
    w("end\n")


def mesh_to_string(mesh: Mesh) -> str:
    buf = io.StringIO()
    save_mesh(mesh, buf)
    return buf.getvalue()


def load_mesh(source) -> Mesh:
    """Read a mesh from a path or text stream; errors carry the line number."""
    if isinstance(source, (str, os.PathLike)) and not str(source).startswith(FORMAT_HEADER):
        with open(source) as fh:
            return load_mesh(fh)
    if isinstance(source, str):
        source = io.StringIO(source)
    return _parse(source)


def _parse(stream: TextIO) -> Mesh:
    lines = [
        (n, ln.split("#", 1)[0].split())
        for n, ln in enumerate(stream.read().splitlines(), start=1)
    ]
    lines = [(n, toks) for n, toks in lines if toks]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshFormatError("unexpected end of file", last)
        item = lines[pos]
        pos += 1
        return item

    def section(name):
        n, toks = take()
        if len(toks) != 2 or toks[0] != name:
            raise MeshFormatError(f"expected '{name} <count>'", n)
        try:
            count = int(toks[1])
        except ValueError:
            raise MeshFormatError(f"bad {name} count {toks[1]!r}", n) from None
        if count < 0:
            raise MeshFormatError(f"negative {name} count", n)
        return count

    def parse_row(n, toks, kinds, what):
        if len(toks) != len(kinds):
            raise MeshFormatError(f"{what}: expected {len(kinds)} fields, got {len(toks)}", n)
        try:
            return [k(t) for k, t in zip(kinds, toks)]
        except ValueError:
            raise MeshFormatError(f"{what}: unparsable field in {' '.join(toks)!r}", n) from None

    n, toks = take()
    if " ".join(toks) != FORMAT_HEADER:
        raise MeshFormatError(f"missing header {FORMAT_HEADER!r}", n)

    vertices = [parse_row(*take(), [float] * 3, "vertex") for _ in range(section("vertices"))]
    corners, materials = [], []
    for _ in range(section("cells")):
        n, toks = take()
        row = parse_row(n, toks, [int] * 8 + [float, float], "cell")
        corners.append(row[:8])
        try:
            materials.append(Material(row[8], row[9]))
        except MeshError as exc:
            raise MeshFormatError(str(exc), n) from None

    link_lines = []
    links = []
    for _ in range(section("links")):
        n, toks = take()
        links.append(parse_row(n, toks, [int] * 4, "link"))
        link_lines.append(n)

    boundary = {}
    for _ in range(section("boundary")):
        n, toks = take()
        if len(toks) >= 3 and toks[2] == "fixed":
            cell, face, _, T_fix, onset = parse_row(n, toks, [int, int, str, float, float], "boundary")
            bc = BoundaryCondition.fixed(T_fix, onset)
        else:
            cell, face, kind = parse_row(n, toks, [int, int, str], "boundary")
            if kind != "adiabatic":
                raise MeshFormatError(f"unknown boundary kind {kind!r}", n)
            bc = ADIABATIC
        if (cell, face) in boundary:
            raise MeshFormatError(f"face ({cell}, {face}) tagged twice", n)
        boundary[(cell, face)] = bc

    n, toks = take()
    if toks != ["end"]:
        raise MeshFormatError("expected 'end'", n)

    nv = len(vertices)
    verts = np.array(vertices, dtype=float).reshape(-1, 3)
    for i, row in enumerate(corners):
        if min(row) < 0 or max(row) >= nv:
            raise MeshFormatError(f"cell {i} references a missing vertex")
    owner: dict[tuple[int, int], int] = {}
    for row, lineno in zip(links, link_lines):
        zeta, iota, chi, kappa = row
        if not (0 <= zeta < len(corners) and 0 <= chi < len(corners) and 0 <= iota < 6 and 0 <= kappa < 6):
            raise MeshFormatError(f"dangling link {tuple(row)}: no such cell or face", lineno)
        a = verts[[corners[zeta][c] for c in FACE_CORNERS[iota]]]
        b = verts[[corners[chi][c] for c in FACE_CORNERS[kappa]]]
        if not _same_point_set(a, b, CONFORMITY_TOL):
            raise MeshFormatError(f"non-conforming link {tuple(row)}", lineno)
        for key in ((zeta, iota), (chi, kappa)):
            if key in owner:
                raise MeshFormatError(f"face {key} already assigned on line {owner[key]}", lineno)
            owner[key] = lineno
    for key in boundary:
        if key in owner:
            raise MeshFormatError(f"face {key} is both linked (line {owner[key]}) and tagged")
    try:
        return Mesh(np.array(vertices).reshape(-1, 3), np.array(corners).reshape(-1, 8),
                    tuple(materials), np.array(links).reshape(-1, 4), boundary)
    except MeshFormatError:
        raise
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from None
