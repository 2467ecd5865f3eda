import numpy as np
import pytest

from tetmg.core.exceptions import DescriptorMismatchError, LevelError, PointLocationError
from tetmg.models.space import Layout, p1, p1_vector, p2
from tetmg.models.subgroups import SubgroupId
from tetmg.services.fe_function import (
    allocate,
    axpy,
    build_interface_map,
    dot,
    evaluate_at,
    fill,
    interpolate,
    scale,
    sync_additive,
    sync_broadcast,
)
from tetmg.services.indexing import linearize, vertex_offsets_of


def _max_replica_spread(fn, level):
    imap = fn.interface(level)
    flat = fn.data(level).reshape(-1)
    owner = flat[imap.owner_slots][imap.replica_groups]
    return np.abs(flat[imap.replica_slots] - owner).max() if imap.n_groups else 0.0


class TestAllocate:
    def test_p1_reference(self, ref_tet):
        fn = allocate(p1(), ref_tet, (2, 2))
        assert fn.data(2).shape == (1, 35)
        assert not fn.data(2).any()

    def test_p2_reference(self, ref_tet):
        fn = allocate(p2(), ref_tet, (2, 2))
        assert len(fn.layout(2).blocks) == 8
        assert fn.data(2).shape == (1, 165)

    def test_p1_cube(self, cube):
        fn = allocate(p1(), cube, (2, 3))
        assert fn.data(2).shape == (6, 35)
        assert fn.data(3).shape == (6, 165)
        assert fn.interface(2).n_owned == 125
        assert fn.interface(3).n_owned == 729

    @pytest.mark.parametrize("levels", [(1, 2), (2, 7), (3, 2)])
    def test_level_guard(self, ref_tet, levels):
        with pytest.raises(LevelError):
            allocate(p1(), ref_tet, levels)

    def test_unallocated_level(self, ref_tet):
        fn = allocate(p1(), ref_tet, (2, 2))
        with pytest.raises(LevelError):
            fn.data(3)


class TestInterfaceMap:
    def test_two_tets_share_one_face(self, two_tets):
        imap = build_interface_map(two_tets, p1(), 2)
        assert imap.n_owned == 55
        assert imap.n_groups == 15

    def test_owner_is_smallest_cell(self, cube):
        imap = build_interface_map(cube, p1(), 2)
        for g in range(imap.n_groups):
            members = imap.replica_slots[imap.replica_groups == g]
            assert imap.owner_slots[g] == members.min()

    def test_dirichlet_on_cube_surface(self, cube):
        imap = build_interface_map(cube, p1(), 2)
        ids = np.unique(imap.global_ids[imap.dirichlet])
        # 5^3 lattice minus the 3^3 interior points
        assert len(ids) == 125 - 27

    def test_shared_slots_align(self, two_tets):
        imap = build_interface_map(two_tets, p1(), 2)
        a, b = imap.shared_slots(0, 1)
        assert len(a) == len(b) == 15
        np.testing.assert_array_equal(imap.global_ids[0][a], imap.global_ids[1][b])


class TestInterpolate:
    def test_constant(self, cube):
        fn = allocate(p1(), cube, (2, 2))
        interpolate(fn, 2, lambda x: np.ones(len(x)))
        assert (fn.data(2) == 1.0).all()

    def test_corner_value(self, ref_tet):
        fn = allocate(p1(), ref_tet, (2, 2))
        interpolate(fn, 2, lambda x: x[:, 0])
        assert fn.data(2)[0, linearize(5, (4, 0, 0))] == 1.0

    def test_lattice_value(self, ref_tet):
        fn = allocate(p1(), ref_tet, (2, 2))
        interpolate(fn, 2, lambda x: x.sum(axis=1))
        assert fn.data(2)[0, linearize(5, (1, 1, 1))] == pytest.approx(0.75)

    def test_edge_dofs_at_midpoints(self, ref_tet):
        fn = allocate(p2(), ref_tet, (2, 2))
        interpolate(fn, 2, lambda x: x[:, 0])
        edge = fn.component_view(2, SubgroupId.EDGE_X)[0, 0]
        # first x-edge runs from (0,0,0) to (1,0,0) in lattice units of 1/4
        assert edge[0] == pytest.approx(0.125)

    def test_replicas_identical(self, cube):
        fn = allocate(p1(), cube, (3, 3))
        interpolate(fn, 3, lambda x: np.exp(x[:, 0]) * np.cos(x[:, 1] + 2 * x[:, 2]))
        assert _max_replica_spread(fn, 3) == 0.0

    def test_component_mismatch(self, ref_tet):
        fn = allocate(p1_vector(m=3), ref_tet, (2, 2))
        with pytest.raises(DescriptorMismatchError):
            interpolate(fn, 2, lambda x: x[:, :2])


class TestAlgebra:
    def test_dot_of_ones(self, ref_tet, cube):
        for mesh, expected in ((ref_tet, 35), (cube, 125)):
            ones = allocate(p1(), mesh, (2, 2))
            fill(ones, 2, 1.0)
            assert dot(ones, ones, 2) == expected

    def test_dot_with_zero(self, cube):
        ones = allocate(p1(), cube, (2, 2))
        zeros = ones.similar("zeros")
        fill(ones, 2, 1.0)
        assert dot(ones, zeros, 2) == 0.0

    def test_axpy(self, ref_tet, randomize):
        y = randomize(allocate(p1(), ref_tet, (2, 2)), 2)
        before = y.data(2).copy()
        x = randomize(y.similar("x"), 2)
        axpy(y, 0.0, x, 2)
        np.testing.assert_array_equal(y.data(2), before)
        axpy(y, 1.0, y, 2)
        np.testing.assert_array_equal(y.data(2), 2 * before)

    def test_axpy_then_dot(self, ref_tet):
        x = allocate(p1(), ref_tet, (2, 2))
        y = x.similar("y")
        x.data(2)[0, :4] = [1.0, 2.0, 3.0, 4.0]
        y.data(2)[0, :4] = [1.0, 1.0, 1.0, 1.0]
        axpy(y, 2.0, x, 2)
        assert dot(x, y, 2) == pytest.approx(1 * 3 + 2 * 5 + 3 * 7 + 4 * 9)

    def test_scale(self, ref_tet, randomize):
        y = randomize(allocate(p1(), ref_tet, (2, 2)), 2)
        before = y.data(2).copy()
        scale(y, -0.5, 2)
        np.testing.assert_array_equal(y.data(2), -0.5 * before)

    def test_descriptor_mismatch(self, ref_tet):
        with pytest.raises(DescriptorMismatchError):
            axpy(allocate(p1(), ref_tet, (2, 2)), 1.0, allocate(p2(), ref_tet, (2, 2)), 2)

    def test_dot_counts_shared_dofs_once(self, cube, randomize):
        x = randomize(allocate(p1(), cube, (2, 2)), 2)
        imap = x.interface(2)
        values = np.zeros(imap.n_owned)
        values[imap.global_ids[imap.owned]] = x.data(2)[imap.owned]
        assert dot(x, x, 2) == pytest.approx(float(values @ values), rel=1e-14)

    def test_dot_symmetric(self, cube, randomize):
        x = randomize(allocate(p1(), cube, (2, 2)), 2)
        y = randomize(x.similar("y"), 2)
        assert dot(x, y, 2) == dot(y, x, 2)


class TestSync:
    def test_additive_on_shared_face(self, two_tets):
        fn = allocate(p1(), two_tets, (2, 2))
        fill(fn, 2, 1.0)
        sync_additive(fn, 2)
        assert (fn.data(2) == 2.0).sum() == 30
        assert (fn.data(2) == 1.0).sum() == 70 - 30

    def test_additive_on_cube_diagonal(self, cube):
        fn = allocate(p1(), cube, (2, 2))
        fill(fn, 2, 1.0)
        sync_additive(fn, 2)
        # the five lattice points of the main diagonal are shared by all six cells
        assert fn.data(2).max() == 6.0
        assert (fn.data(2) == 6.0).sum() == 5 * 6

    def test_additive_single_cell_is_noop(self, ref_tet, randomize):
        fn = randomize(allocate(p1(), ref_tet, (2, 2)), 2)
        before = fn.data(2).copy()
        sync_additive(fn, 2)
        np.testing.assert_array_equal(fn.data(2), before)

    def test_broadcast_owner_wins(self, two_tets):
        fn = allocate(p1(), two_tets, (2, 2))
        imap = fn.interface(2)
        flat = fn.data(2).reshape(-1)
        flat[imap.owner_slots[0]] = 3.5
        sync_broadcast(fn, 2)
        members = imap.replica_slots[imap.replica_groups == 0]
        assert (flat[members] == 3.5).all()

    def test_broadcast_idempotent(self, cube, rng):
        fn = allocate(p1(), cube, (2, 2))
        fn.data(2)[...] = rng.standard_normal(fn.data(2).shape)
        sync_broadcast(fn, 2)
        assert _max_replica_spread(fn, 2) == 0.0
        once = fn.data(2).copy()
        sync_broadcast(fn, 2)
        np.testing.assert_array_equal(fn.data(2), once)

    def test_additive_of_owner_only_equals_broadcast(self, cube, randomize):
        fn = randomize(allocate(p1(), cube, (2, 2)), 2)
        fn.data(2)[~fn.interface(2).owned] = 0.0
        sync_additive(fn, 2)
        assert _max_replica_spread(fn, 2) == 0.0


class TestEvaluate:
    def test_linear_reproduced(self, cube):
        fn = allocate(p1(), cube, (2, 2))
        interpolate(fn, 2, lambda x: x[:, 0])
        assert evaluate_at(fn, 2, (0.3, 0.1, 0.05)) == pytest.approx(0.3, abs=1e-13)

    def test_lattice_vertex(self, ref_tet, randomize):
        fn = randomize(allocate(p1(), ref_tet, (2, 2)), 2)
        value = fn.data(2)[0, linearize(5, (1, 2, 0))]
        assert evaluate_at(fn, 2, (0.25, 0.5, 0.0)) == pytest.approx(value, abs=1e-13)

    def test_cell_centroid_is_mean(self, ref_tet, randomize):
        fn = randomize(allocate(p1(), ref_tet, (2, 2)), 2)
        corners = vertex_offsets_of(SubgroupId.CELL_I_UP, 2)[0]
        expected = fn.data(2)[0, corners].mean()
        assert evaluate_at(fn, 2, (1 / 16, 1 / 16, 1 / 16)) == pytest.approx(expected, abs=1e-13)

    def test_affine_at_random_points(self, cube, rng):
        def f(x):
            return 1.5 - 2.0 * x[:, 0] + 0.25 * x[:, 1] + 3.0 * x[:, 2]

        fn = allocate(p1(), cube, (2, 2))
        interpolate(fn, 2, f)
        points = rng.random((100, 3))
        for point in points:
            expected = float(f(point[None, :])[0])
            assert evaluate_at(fn, 2, point) == pytest.approx(expected, rel=1e-13, abs=1e-13)

    def test_vector_function(self, ref_tet):
        fn = allocate(p1_vector(Layout.SOA), ref_tet, (2, 2))
        interpolate(fn, 2, lambda x: x)
        np.testing.assert_allclose(evaluate_at(fn, 2, (0.1, 0.2, 0.3)), [0.1, 0.2, 0.3], atol=1e-13)

    def test_outside_domain(self, ref_tet):
        fn = allocate(p1(), ref_tet, (2, 2))
        with pytest.raises(PointLocationError):
            evaluate_at(fn, 2, (0.9, 0.9, 0.9))


class TestLayoutOpacity:
    def test_vector_interpolation_and_dot(self, cube):
        def f(x):
            return np.stack([np.sin(x[:, 0]), x[:, 1] ** 2, x[:, 0] * x[:, 2]], axis=1)

        aos = allocate(p1_vector(Layout.AOS), cube, (2, 2))
        soa = allocate(p1_vector(Layout.SOA), cube, (2, 2))
        interpolate(aos, 2, f)
        interpolate(soa, 2, f)
        np.testing.assert_array_equal(
            aos.component_view(2, SubgroupId.V), soa.component_view(2, SubgroupId.V)
        )
        assert dot(aos, aos, 2) == dot(soa, soa, 2)

    def test_soa_stores_components_contiguously(self, ref_tet):
        fn = allocate(p1_vector(Layout.SOA), ref_tet, (2, 2))
        interpolate(fn, 2, lambda x: np.stack([np.zeros(len(x)), np.ones(len(x)), np.zeros(len(x))], axis=1))
        assert (fn.data(2)[0, 35:70] == 1.0).all()
        assert not fn.data(2)[0, :35].any()
