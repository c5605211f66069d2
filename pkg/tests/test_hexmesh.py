import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import UNIT_CUBE, projective_hex_vertices, random_hex_vertices, seeds
from dscheme.hexmesh import (
    ADIABATIC,
    FACE_CORNERS,
    BoundaryCondition,
    Material,
    Mesh,
    MeshError,
    MeshFormatError,
    build_structured_mesh,
    cell_from_vertices,
    hex_volume,
    hex_volume_5tet,
    load_mesh,
    mesh_to_string,
    save_mesh,
    volume,
)

SHEAR = np.array([[1.0, 0.3, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def face_vectors_reference(e):
    # transcription of the wedge rule with cyclic edge indices
    out = []
    for iota in range(6):
        s = (-1) ** iota
        a = e[(8 + 2 * iota) % 12] + e[(9 + 2 * (iota + s)) % 12]
        b = e[(4 + 2 * iota) % 12] + e[(5 + 2 * iota) % 12]
        out.append(s / 4 * np.cross(a, b))
    return np.array(out)


class TestUnitCube:
    def test_node_vectors_are_axes(self):
        c = cell_from_vertices(UNIT_CUBE)
        np.testing.assert_array_equal(c.b, np.eye(3))
        np.testing.assert_array_equal(c.beta, np.eye(3))
        np.testing.assert_array_equal(c.gamma, np.eye(3))
        assert c.volume == 1.0

    def test_face_vectors_unit_and_outward(self):
        c = cell_from_vertices(UNIT_CUBE)
        np.testing.assert_allclose(np.linalg.norm(c.f, axis=1), 1.0)
        expected = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], float)
        np.testing.assert_array_equal(c.f, expected)

    def test_scaled_by_two(self):
        c = cell_from_vertices(2 * UNIT_CUBE)
        assert c.volume == 8.0
        np.testing.assert_allclose(np.linalg.norm(c.f, axis=1), 4.0)
        np.testing.assert_allclose(np.linalg.norm(c.b, axis=1), 2.0)

    def test_sheared_cell(self):
        v = UNIT_CUBE @ SHEAR.T
        c = cell_from_vertices(v)
        assert c.volume == pytest.approx(1.0, rel=1e-14)
        assert hex_volume_5tet(v) == pytest.approx(1.0, rel=1e-14)
        assert abs(c.beta[0, 1]) > 0.1
        np.testing.assert_allclose(c.gamma.T @ c.beta, np.eye(3), atol=1e-14)

    def test_box(self):
        v = UNIT_CUBE * [2.0, 3.0, 0.5]
        assert volume(cell_from_vertices(v)) == pytest.approx(3.0, rel=1e-15)


@given(seeds)
def test_eq51_identities_exact(seed):
    rng = np.random.default_rng(seed)
    c = cell_from_vertices(random_hex_vertices(rng))
    e = c.vertices[[0, 2, 6, 4, 0, 4, 5, 1, 0, 1, 3, 2]]
    e = c.vertices[[1, 3, 7, 5, 2, 6, 7, 3, 4, 5, 7, 6]] - e
    np.testing.assert_array_equal(c.edges, e)
    for mu in range(3):
        np.testing.assert_array_equal(c.b[mu], 0.25 * sum(e[4 * mu + nu] for nu in range(4)))
    np.testing.assert_allclose(c.f, face_vectors_reference(e), rtol=0, atol=1e-15)


@given(seeds)
def test_face_vectors_point_outward(seed):
    rng = np.random.default_rng(seed)
    c = cell_from_vertices(random_hex_vertices(rng))
    offsets = c.face_centers() - c.node_point
    assert np.all(np.einsum("ij,ij->i", c.f, offsets) > 0)


@given(seeds)
def test_dual_basis_recovery(seed):
    rng = np.random.default_rng(seed)
    c = cell_from_vertices(random_hex_vertices(rng))
    np.testing.assert_allclose(c.gamma.T @ c.beta, np.eye(3), atol=1e-12)
    a = rng.normal(size=3)
    alpha_B = c.b @ a
    np.testing.assert_allclose(c.gamma @ alpha_B, a, atol=1e-12 * np.linalg.norm(a))


@given(seeds, st.floats(0.1, 10.0))
def test_scaling_law(seed, eps):
    rng = np.random.default_rng(seed)
    v = random_hex_vertices(rng)
    c, s = cell_from_vertices(v), cell_from_vertices(eps * v)
    np.testing.assert_allclose(s.b, eps * c.b, rtol=1e-12, atol=1e-12 * eps)
    np.testing.assert_allclose(s.f, eps**2 * c.f, rtol=1e-12, atol=1e-12 * eps**2)
    assert s.volume == pytest.approx(eps**3 * c.volume, rel=1e-12)


@given(seeds)
def test_outward_faces_close(seed):
    rng = np.random.default_rng(seed)
    c = cell_from_vertices(random_hex_vertices(rng))
    np.testing.assert_allclose(c.f.sum(axis=0), 0.0, atol=1e-12 * np.abs(c.f).max())


@given(seeds)
def test_volume_matches_five_tet_on_planar_faces(seed):
    rng = np.random.default_rng(seed)
    v = projective_hex_vertices(rng)
    assert hex_volume(v) == pytest.approx(hex_volume_5tet(v), rel=1e-12)


def test_volume_decompositions_differ_on_warped_faces():
    v = UNIT_CUBE.copy()
    v[7] += [0.2, 0.1, 0.3]
    assert hex_volume(v) == pytest.approx(1.2)
    assert hex_volume_5tet(v) == pytest.approx(1.1)


class TestDegenerate:
    def test_zero_length_edge(self):
        v = UNIT_CUBE.copy()
        v[1] = v[0]
        with pytest.raises(MeshError, match="edge 0"):
            cell_from_vertices(v)

    def test_flat_cell(self):
        v = UNIT_CUBE.copy()
        v[:, 2] = 0.0
        with pytest.raises(MeshError, match="degenerate"):
            cell_from_vertices(v)

    def test_inverted_cell(self):
        v = UNIT_CUBE.copy()
        v[:, 0] = -v[:, 0]
        with pytest.raises(MeshError, match="inverted"):
            cell_from_vertices(v)

    def test_folded_face_named(self):
        v = UNIT_CUBE.copy()
        v[7] = [0.2, 0.2, 0.2]
        with pytest.raises(MeshError, match="face"):
            cell_from_vertices(v)

    def test_wrong_shape(self):
        with pytest.raises(MeshError):
            cell_from_vertices(np.zeros((7, 3)))

    def test_material_positive(self):
        with pytest.raises(MeshError):
            Material(0.0, 1.0)


class TestStructured:
    def test_single_cube(self):
        m = build_structured_mesh(1, 1, 1)
        assert m.n_cells == 1 and len(m.links) == 0 and len(m.boundary) == 6
        assert all(bc == ADIABATIC for bc in m.boundary.values())

    def test_two_cells_one_link(self):
        m = build_structured_mesh(2, 1, 1)
        np.testing.assert_array_equal(m.links, [[0, 1, 1, 0]])
        assert len(m.boundary) == 10

    def test_identical_boxes_without_distortion(self):
        m = build_structured_mesh(3, 2, 2, spacing=0.5)
        for c in m.cells:
            np.testing.assert_allclose(c.b, 0.5 * np.eye(3))
            assert c.volume == pytest.approx(0.125)

    @settings(max_examples=8)
    @given(seeds, st.floats(0.0, 0.25))
    def test_jittered_square_mesh_valid(self, seed, jitter):
        m = build_structured_mesh(20, 20, 1, jitter=jitter, planar_jitter=True, seed=seed)
        assert m.n_cells == 400
        assert min(c.volume for c in m.cells) > 0

    def test_jittered_3d_valid_and_box_preserved(self):
        m = build_structured_mesh(5, 4, 3, jitter=0.25, seed=3)
        assert sum(c.volume for c in m.cells) == pytest.approx(60.0, rel=1e-12)

    def test_sheared_mesh(self):
        m = build_structured_mesh(4, 4, 1, shear=SHEAR)
        for c in m.cells:
            np.testing.assert_allclose(c.b[1], [0.3, 1.0, 0.0])

    def test_bad_jitter(self):
        with pytest.raises(MeshError):
            build_structured_mesh(2, 2, 2, jitter=0.5)

    def test_degenerate_shear_rejected(self):
        with pytest.raises(MeshError):
            build_structured_mesh(2, 2, 1, shear=[[1, 1, 0], [1, 1, 0], [0, 0, 1]])

    def test_links_cover_interior_faces(self):
        nx, ny, nz = 3, 4, 2
        m = build_structured_mesh(nx, ny, nz)
        assert len(m.links) == (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
        assert len(m.links) * 2 + len(m.boundary) == 6 * m.n_cells


class TestSides:
    def test_side_faces(self):
        m = build_structured_mesh(3, 2, 1)
        assert m.side_faces("x-") == [(0, 0), (3, 0)]
        assert m.side_faces("x+") == [(2, 1), (5, 1)]
        assert len(m.side_faces("z+")) == 6

    def test_sides_on_jittered_mesh(self):
        m = build_structured_mesh(6, 6, 1, jitter=0.25, planar_jitter=True, seed=1)
        for side in ("x-", "x+", "y-", "y+"):
            assert len(m.side_faces(side)) == 6

    def test_with_boundary(self):
        m = build_structured_mesh(2, 2, 1).with_boundary({"y+": BoundaryCondition.fixed(5.0, 1.0)})
        fixed = sorted(k for k, bc in m.boundary.items() if bc.kind == "fixed")
        assert fixed == [(2, 3), (3, 3)]
        assert m.boundary[(2, 3)].is_fixed_at(1.0) and not m.boundary[(2, 3)].is_fixed_at(0.5)

    def test_unknown_side(self):
        with pytest.raises(MeshError):
            build_structured_mesh(1, 1, 1).side_faces("w+")

    def test_boundary_onset_nonnegative(self):
        with pytest.raises(MeshError):
            BoundaryCondition.fixed(1.0, -1.0)


class TestCoverage:
    def test_missing_face(self):
        m = build_structured_mesh(1, 1, 1)
        b = dict(m.boundary)
        del b[(0, 3)]
        with pytest.raises(MeshError, match="neither linked nor tagged"):
            Mesh(m.vertices, m.corners, m.materials, m.links, b)

    def test_face_assigned_twice(self):
        m = build_structured_mesh(2, 1, 1)
        b = dict(m.boundary)
        b[(0, 1)] = ADIABATIC
        with pytest.raises(MeshError, match="assigned twice"):
            Mesh(m.vertices, m.corners, m.materials, m.links, b)

    def test_non_conforming_link(self):
        m = build_structured_mesh(2, 1, 1)
        b = dict(m.boundary)
        del b[(0, 3)], b[(1, 2)]
        b[(0, 1)] = ADIABATIC
        b[(1, 0)] = ADIABATIC
        with pytest.raises(MeshError, match="non-conforming"):
            Mesh(m.vertices, m.corners, m.materials, [[0, 3, 1, 2]], b)


class TestFormat:
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.floats(0, 0.3), seeds)
    def test_round_trip(self, nx, ny, nz, jitter, seed):
        m = build_structured_mesh(nx, ny, nz, jitter=jitter, seed=seed,
                                  material=Material(0.7, 1.3e6))
        m = m.with_boundary({"x-": BoundaryCondition.fixed(1 / 3, 0.1)})
        assert load_mesh(mesh_to_string(m)) == m

    def test_round_trip_file(self, tmp_path):
        m = build_structured_mesh(2, 2, 2, jitter=0.2, seed=7)
        path = tmp_path / "m.mesh"
        save_mesh(m, path)
        assert load_mesh(path) == m
        assert load_mesh(str(path)) == m

    def _text(self):
        return mesh_to_string(build_structured_mesh(2, 1, 1)).splitlines()

    def test_dangling_link(self):
        lines = self._text()
        i = lines.index("links 1") + 1
        lines[i] = "0 1 7 0"
        with pytest.raises(MeshFormatError, match=r"dangling link \(0, 1, 7, 0\)") as exc:
            load_mesh("\n".join(lines))
        assert exc.value.lineno == i + 1

    def test_duplicate_face(self):
        lines = self._text()
        i = lines.index("links 1") + 1
        lines[i:i + 1] = ["links 2", "0 1 1 0", "0 1 1 0"]
        del lines[i - 1]
        with pytest.raises(MeshFormatError, match="already assigned"):
            load_mesh("\n".join(lines))

    def test_linked_and_tagged(self):
        lines = self._text()
        i = lines.index("end")
        n = [k for k, ln in enumerate(lines) if ln.startswith("boundary")][0]
        count = int(lines[n].split()[1])
        lines[n] = f"boundary {count + 1}"
        lines.insert(i, "0 1 adiabatic")
        with pytest.raises(MeshFormatError, match="both linked"):
            load_mesh("\n".join(lines))

    def test_malformed_line_number(self):
        lines = self._text()
        lines[2] = "0.0 zero 0.0"
        with pytest.raises(MeshFormatError, match="line 3"):
            load_mesh("\n".join(lines))

    def test_missing_header(self):
        with pytest.raises(MeshFormatError, match="header"):
            load_mesh(io.StringIO("vertices 0\n"))

    def test_truncated(self):
        text = "\n".join(self._text()[:-3])
        with pytest.raises(MeshFormatError, match="end of file"):
            load_mesh(text)

    def test_non_conforming_in_file(self):
        lines = self._text()
        i = lines.index("links 1") + 1
        lines[i] = "0 3 1 2"
        with pytest.raises(MeshFormatError, match="non-conforming"):
            load_mesh("\n".join(lines))

    def test_seventeen_digits(self):
        m = build_structured_mesh(1, 1, 1, spacing=1 / 3)
        text = mesh_to_string(m)
        assert "0.3333333333333333" in text
        np.testing.assert_array_equal(load_mesh(text).vertices, m.vertices)


def test_face_corners_match_face_vectors():
    c = cell_from_vertices(UNIT_CUBE)
    for iota, corners in enumerate(FACE_CORNERS):
        centre = UNIT_CUBE[list(corners)].mean(axis=0)
        np.testing.assert_allclose(centre - 0.5, 0.5 * c.f[iota])
