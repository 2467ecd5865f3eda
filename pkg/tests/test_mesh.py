import numpy as np
import pytest

from tetmg.core.exceptions import DegenerateCellError, MeshParseError, NonConformingMeshError
from tetmg.models.mesh import PrimitiveId
from tetmg.models.subgroups import PrimitiveKind
from tetmg.services.mesh_service import (
    IDENTITY_PERMUTATION,
    apply_inner_edge_permutations,
    build_mesh,
    build_primitive_graph,
    load_mesh,
    macro_cell_map,
    parse_mesh,
    select_inner_edge_permutation,
    serialize_mesh,
)

V, E, F, C = PrimitiveKind.VERTEX, PrimitiveKind.EDGE, PrimitiveKind.FACE, PrimitiveKind.CELL

REF_TET_TEXT = """# reference tetrahedron
vertices 4
0 0 0
1 0 0
0 1 0
0 0 1
cells 1
0 1 2 3
"""


class TestParse:
    def test_reference_tetrahedron(self):
        mesh = parse_mesh(REF_TET_TEXT)
        assert (mesh.n_cells, len(mesh.faces), len(mesh.edges), mesh.n_vertices) == (1, 4, 6, 4)
        assert len(mesh.boundary_faces) == 4
        assert len(mesh.dirichlet_faces) == 4

    def test_kuhn_cube_counts(self, cube):
        assert (cube.n_cells, len(cube.faces), len(cube.edges), cube.n_vertices) == (6, 18, 19, 8)
        assert len(cube.boundary_faces) == 12
        assert cube.mesh_volume() == pytest.approx(1.0, abs=1e-14)

    def test_face_incidence_sums_to_four_per_cell(self, cube):
        assert sum(len(fc) for fc in cube.face_cells) == 4 * cube.n_cells
        assert all(len(cube.face_cells[f]) == 1 for f in cube.boundary_faces)

    def test_face_in_three_cells_rejected(self):
        text = """vertices 6
0 0 0
1 0 0
0 1 0
0 0 1
0 0 -1
1 1 1
cells 3
0 1 2 3
0 1 2 4
0 1 2 5
"""
        with pytest.raises(NonConformingMeshError):
            parse_mesh(text)

    def test_degenerate_cell_rejected(self):
        text = "vertices 4\n0 0 0\n1 0 0\n0 1 0\n1 1 0\ncells 1\n0 1 2 3\n"
        with pytest.raises(DegenerateCellError):
            parse_mesh(text)

    def test_hanging_node_rejected(self):
        # vertex 5 sits in the middle of edge 0-1 of the first cell
        coords = np.array(
            [[0, 0, 0], [2, 0, 0], [0, 2, 0], [0, 0, 2], [1, 0, -1], [1, 0, 0]], dtype=float
        )
        with pytest.raises(NonConformingMeshError):
            build_mesh(coords, [(0, 1, 2, 3), (0, 5, 2, 4)])

    def test_syntax_error_reports_line(self):
        with pytest.raises(MeshParseError) as exc:
            parse_mesh("vertices 2\n0 0 0\n1 0\n")
        assert exc.value.line == 3
        assert "line 3" in exc.value.message

    def test_missing_cells_section(self):
        with pytest.raises(MeshParseError):
            parse_mesh("vertices 1\n0 0 0\n")

    def test_negative_orientation_repaired(self):
        mesh = parse_mesh("vertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ncells 1\n0 1 3 2\n")
        assert mesh.cells == ((0, 1, 2, 3),)
        assert macro_cell_map(mesh, 0).determinant > 0

    def test_boundary_override(self):
        mesh = parse_mesh(REF_TET_TEXT + "boundary 1\n2 1 0 0\n")
        assert len(mesh.boundary_faces) == 4
        assert len(mesh.dirichlet_faces) == 3

    def test_boundary_entry_must_be_boundary_face(self, two_tets):
        text = serialize_mesh(two_tets) + "boundary 1\n1 2 3 0\n"
        with pytest.raises(MeshParseError):
            parse_mesh(text)

    def test_round_trip(self, cube):
        again = parse_mesh(serialize_mesh(cube))
        assert again.same_as(cube)

    def test_round_trip_keeps_natural_faces(self):
        mesh = parse_mesh(REF_TET_TEXT + "boundary 1\n0 1 2 0\n")
        assert parse_mesh(serialize_mesh(mesh)).same_as(mesh)

    def test_load_mesh_from_file(self, tmp_path):
        path = tmp_path / "tet.mesh"
        path.write_text(REF_TET_TEXT)
        assert load_mesh(str(path)).n_cells == 1
        assert load_mesh("cube-kuhn").n_cells == 6


class TestPrimitiveGraph:
    def test_single_tetrahedron_links(self, ref_tet):
        graph = build_primitive_graph(ref_tet)
        assert len(graph.neighbors(PrimitiveId(C, 0))) == 14
        assert graph.link_count(C, C) == 0

    def test_two_tetrahedra_share_one_link(self, two_tets):
        assert build_primitive_graph(two_tets).link_count(C, C) == 1

    def test_kuhn_cube_interior_faces(self, cube):
        assert build_primitive_graph(cube).link_count(C, C) == 6

    def test_symmetry(self, cube):
        graph = build_primitive_graph(cube)
        for node, adjacent in graph.adjacency.items():
            for other in adjacent:
                assert node in graph.adjacency[other]
                assert graph.has_link(other, node)

    def test_face_links(self, ref_tet):
        graph = build_primitive_graph(ref_tet)
        face = PrimitiveId(F, 0)
        assert len(graph.neighbors(face, E)) == 3
        assert len(graph.neighbors(face, V)) == 3


class TestMacroCellMap:
    def test_reference_is_identity(self, ref_tet):
        cmap = macro_cell_map(ref_tet, PrimitiveId(C, 0))
        np.testing.assert_array_equal(cmap.jacobian, np.eye(3))
        np.testing.assert_array_equal(cmap.offset, np.zeros(3))

    def test_scaled_tetrahedron(self):
        mesh = build_mesh(2.0 * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]), [(0, 1, 2, 3)])
        cmap = macro_cell_map(mesh, 0)
        np.testing.assert_array_equal(cmap.jacobian, 2 * np.eye(3))
        assert cmap.determinant == pytest.approx(8.0)

    def test_columns_are_edge_vectors(self):
        coords = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=float)
        cmap = macro_cell_map(build_mesh(coords, [(0, 1, 2, 3)]), 0)
        np.testing.assert_array_equal(cmap.jacobian[:, 0], [1, 0, 0])
        np.testing.assert_array_equal(cmap.jacobian[:, 1], [1, 1, 0])
        np.testing.assert_array_equal(cmap.jacobian[:, 2], [1, 1, 1])
        assert cmap.determinant == pytest.approx(1.0)

    def test_round_trip_points(self, cube, rng):
        cmap = macro_cell_map(cube, 3)
        ref = rng.random((10, 3)) / 3
        np.testing.assert_allclose(cmap.to_reference(cmap.to_physical(ref)), ref, atol=1e-14)


class TestInnerEdge:
    def test_disabled_is_identity(self, cube):
        for c in range(cube.n_cells):
            assert select_inner_edge_permutation(cube, c) == IDENTITY_PERMUTATION

    def test_reference_tetrahedron_ties_break_lexicographically(self, ref_tet):
        # all three inner-edge candidates have length sqrt(3)/2
        assert select_inner_edge_permutation(ref_tet, 0, enabled=True) == (0, 1, 2, 3)

    def test_stretched_cell_avoids_long_diagonal(self):
        coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 4]], dtype=float)
        mesh = build_mesh(coords, [(0, 1, 2, 3)])
        # candidate lengths: sqrt(5), 2, sqrt(5)
        assert select_inner_edge_permutation(mesh, 0, enabled=True) == (0, 1, 3, 2)

    def test_permuted_mesh_stays_valid(self, cube):
        permuted = apply_inner_edge_permutations(cube)
        assert permuted.n_cells == 6
        assert all(macro_cell_map(permuted, c).determinant > 0 for c in range(6))
        assert permuted.mesh_volume() == pytest.approx(1.0)
