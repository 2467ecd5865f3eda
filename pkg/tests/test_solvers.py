import io
import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse.linalg
from pydantic import ValidationError

from tests.conftest import sine_solution, sine_source
from tetmg.core.exceptions import (
    DescriptorMismatchError,
    LevelError,
    MissingPrerequisiteError,
    SolverBreakdownError,
    SolverDivergenceError,
)
from tetmg.models.space import Layout, p1, p2
from tetmg.schemas.report import IterationRecord, StudyRow
from tetmg.schemas.run import Command, RunConfig
from tetmg.schemas.solver import MultigridConfig, SmootherConfig, SmootherKind
from tetmg.services.assembly import assemble, enumerate_global
from tetmg.services.fe_function import allocate, dot, fill, interpolate, norm
from tetmg.services.indexing import linearize
from tetmg.services.operators import BoundaryCondition, FormId, Kernel, make_operator
from tetmg.services.solvers import (
    GridHierarchy,
    cg,
    estimate_lambda_max,
    fmg,
    l2_error,
    load_vector,
    measure_convergence_factor,
    prolongate_p1,
    restrict_p1,
    smooth,
    solve_vcycles,
    v_cycle,
    write_csv,
)

NONE = BoundaryCondition.NONE
DIRICHLET = BoundaryCondition.DIRICHLET_IDENTITY


class IdentityOperator:
    bc = BoundaryCondition.NONE

    def apply(self, src, dst, level, mode=None):
        dst.data(level)[...] = src.data(level)


class NegativeOperator(IdentityOperator):
    def apply(self, src, dst, level, mode=None):
        dst.data(level)[...] = -src.data(level)


def _hierarchy(mesh, levels, smoother=None, **config):
    op = make_operator(FormId.diffusion(), mesh, Kernel.STENCIL, DIRICHLET)
    mg = MultigridConfig(smoother=smoother or SmootherConfig(), **config)
    return GridHierarchy(op, levels, mg)


def _random_guess(mesh, levels, level, randomize):
    x = randomize(allocate(p1(), mesh, levels, "x"), level)
    return x.similar("rhs"), x


class TestSchemas:
    def test_smoother_defaults(self):
        config = SmootherConfig()
        assert config.kind == SmootherKind.GAUSS_SEIDEL
        assert (config.order, config.lo, config.hi) == (2, 0.25, 1.1)

    @pytest.mark.parametrize(
        "kwargs",
        [{"omega": 1.5}, {"omega": 0.0}, {"order": 0}, {"lo": 1.2, "hi": 1.1}, {"nu1": -1}],
    )
    def test_smoother_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            SmootherConfig(**kwargs)

    def test_multigrid_rejects(self):
        with pytest.raises(ValidationError):
            MultigridConfig(coarse_level=1)
        with pytest.raises(ValidationError):
            MultigridConfig(cycles_per_level=0)

    def test_run_config(self):
        with pytest.raises(ValidationError):
            RunConfig(command=Command.POISSON, name="")
        with pytest.raises(ValidationError):
            RunConfig(command=Command.POISSON, min_level=1)
        with pytest.raises(ValidationError):
            RunConfig(command=Command.POISSON, min_level=4, max_level=3)
        with pytest.raises(ValidationError):
            RunConfig(command=Command.POISSON, min_level=2, max_level=6)
        assert RunConfig(command=Command.EXPORT_VTK, min_level=6, max_level=6).max_level == 6
        assert RunConfig(command=Command.VERIFY_TAXONOMY, min_level=1, max_level=1).min_level == 1


class TestCG:
    def test_matches_direct_solve(self, cube):
        level = 3
        op = make_operator(FormId.diffusion(), cube)
        b = allocate(p1(), cube, (level, level), "b")
        load_vector(b, level, sine_source)
        x = b.similar("x")
        report = cg(op, b, x, level, tol=1e-12)
        assert report.converged
        assert report.relative_residual <= 1e-12
        assert len(report.history) == report.iterations + 1

        enum = enumerate_global(p1(), cube, level)
        A = assemble(FormId.diffusion(), cube, level, DIRICHLET).tocsc()
        expected = scipy.sparse.linalg.spsolve(A, enum.gather(b))
        np.testing.assert_allclose(enum.gather(x), expected, atol=1e-9)

    def test_kernels_agree(self, cube):
        level = 3
        b = allocate(p1(), cube, (level, level), "b")
        load_vector(b, level, sine_source)
        xs = []
        for kernel in Kernel:
            x = b.similar("x")
            cg(make_operator(FormId.diffusion(), cube, kernel), b, x, level, tol=1e-12)
            xs.append(x.data(level))
        np.testing.assert_allclose(xs[0], xs[1], rtol=1e-9, atol=1e-12)

    def test_dirichlet_values_imposed(self, ref_tet):
        level = 2
        op = make_operator(FormId.diffusion(), ref_tet)
        b = allocate(p1(), ref_tet, (level, level), "b")
        load_vector(b, level, lambda x: np.zeros(len(x)), boundary=lambda x: 1 + x[:, 0])
        x = b.similar("x")
        cg(op, b, x, level, tol=1e-13)
        # discrete harmonic extension of a linear function is the function
        expected = b.similar("u")
        interpolate(expected, level, lambda p: 1 + p[:, 0])
        np.testing.assert_allclose(x.data(level), expected.data(level), atol=1e-11)

    def test_zero_rhs(self, ref_tet):
        op = make_operator(FormId.diffusion(), ref_tet)
        b = allocate(p1(), ref_tet, (2, 2))
        report = cg(op, b, b.similar(), 2)
        assert report.iterations == 0 and report.converged

    def test_indefinite_operator(self, ref_tet):
        b = allocate(p1(), ref_tet, (2, 2))
        fill(b, 2, 1.0)
        with pytest.raises(SolverBreakdownError):
            cg(NegativeOperator(), b, b.similar(), 2)


class TestSpectralEstimate:
    def test_identity(self, ref_tet):
        diag = allocate(p1(), ref_tet, (2, 2))
        fill(diag, 2, 1.0)
        assert estimate_lambda_max(IdentityOperator(), diag, 2) == pytest.approx(1.1, abs=1e-6)

    def test_bounds_largest_eigenvalue(self, ref_tet):
        level = 3
        op = make_operator(FormId.diffusion(), ref_tet)
        lam = _generalized_top_pair(ref_tet, level)[0]
        estimate = estimate_lambda_max(op, op.diagonal(level), level, iterations=50)
        assert 0.9 * 1.1 * lam < estimate <= 1.1 * lam * (1 + 1e-9)

    def test_seed_reproducible(self, ref_tet):
        op = make_operator(FormId.diffusion(), ref_tet)
        diag = op.diagonal(2)
        assert estimate_lambda_max(op, diag, 2, seed=7) == estimate_lambda_max(op, diag, 2, seed=7)

    def test_zero_diagonal(self, ref_tet):
        with pytest.raises(SolverBreakdownError):
            estimate_lambda_max(IdentityOperator(), allocate(p1(), ref_tet, (2, 2)), 2)


def _generalized_top_pair(mesh, level):
    """Largest eigenpair of D^-1 A on the free DoFs, dense"""
    enum = enumerate_global(p1(), mesh, level)
    free = np.setdiff1d(np.arange(enum.n), enum.dirichlet_ids)
    block = assemble(FormId.diffusion(), mesh, level)[free][:, free].toarray()
    values, vectors = scipy.linalg.eigh(block, np.diag(np.diag(block)))
    full = np.zeros(enum.n)
    full[free] = vectors[:, -1]
    return values[-1], full, enum


class TestSmoothers:
    def test_chebyshev_damps_top_mode(self, ref_tet):
        level = 3
        lam, vec, enum = _generalized_top_pair(ref_tet, level)
        op = make_operator(FormId.diffusion(), ref_tet)
        x = allocate(p1(), ref_tet, (level, level))
        enum.scatter(vec, x)
        rhs = x.similar("rhs")
        before = norm(x, level)
        smooth(SmootherConfig(kind=SmootherKind.CHEBYSHEV), op, rhs, x, level, 1, lambda_max=lam)
        # second-degree polynomial on [0.25, 1.1] * lam evaluated at lam
        assert norm(x, level) / before == pytest.approx(0.04192, rel=1e-3)

    def test_jacobi_reduces_top_mode(self, ref_tet):
        level = 3
        lam, vec, enum = _generalized_top_pair(ref_tet, level)
        op = make_operator(FormId.diffusion(), ref_tet)
        x = allocate(p1(), ref_tet, (level, level))
        enum.scatter(vec, x)
        before = norm(x, level)
        smooth(SmootherConfig(kind=SmootherKind.JACOBI, omega=0.5), op, x.similar(), x, level, 1)
        assert norm(x, level) / before == pytest.approx(abs(1 - 0.5 * lam), rel=1e-9)

    def test_gauss_seidel_needs_constant_form(self, ref_tet):
        op = make_operator(FormId.div_k_grad(lambda p: 2 + p[:, 1]), ref_tet, Kernel.ELEMENTWISE)
        x = allocate(p1(), ref_tet, (2, 2))
        with pytest.raises(MissingPrerequisiteError):
            smooth(SmootherConfig(), op, x.similar(), x, 2, 1)

    def test_chebyshev_needs_estimate(self, ref_tet):
        op = make_operator(FormId.diffusion(), ref_tet)
        x = allocate(p1(), ref_tet, (2, 2))
        with pytest.raises(MissingPrerequisiteError):
            smooth(SmootherConfig(kind=SmootherKind.CHEBYSHEV), op, x.similar(), x, 2, 1)

    def test_zero_sweeps_noop(self, ref_tet, randomize):
        op = make_operator(FormId.diffusion(), ref_tet, Kernel.ELEMENTWISE)
        x = randomize(allocate(p1(), ref_tet, (2, 2)), 2)
        before = x.data(2).copy()
        smooth(SmootherConfig(), op, x.similar(), x, 2, 0)
        np.testing.assert_array_equal(x.data(2), before)


class TestTransfer:
    def test_prolongation_averages_edge_endpoints(self, ref_tet, randomize):
        fn = allocate(p1(), ref_tet, (2, 3))
        randomize(fn, 2)
        prolongate_p1(fn, fn, 3)
        coarse, fine = fn.data(2)[0], fn.data(3)[0]
        expected = 0.5 * (coarse[linearize(5, (0, 1, 0))] + coarse[linearize(5, (1, 0, 1))])
        assert fine[linearize(9, (1, 1, 1))] == pytest.approx(expected, rel=1e-15)
        assert fine[linearize(9, (2, 2, 2))] == coarse[linearize(5, (1, 1, 1))]

    def test_prolongation_reproduces_linear(self, cube):
        def f(x):
            return 0.5 - x[:, 0] + 2 * x[:, 1] - 3 * x[:, 2]

        fn = allocate(p1(), cube, (2, 3))
        interpolate(fn, 2, f)
        prolongate_p1(fn, fn, 3)
        expected = fn.similar("expected")
        interpolate(expected, 3, f)
        np.testing.assert_allclose(fn.data(3), expected.data(3), atol=1e-14)

    def test_restrict_prolongate_delta(self, ref_tet):
        coarse = allocate(p1(), ref_tet, (2, 3))
        coarse.data(2)[0, linearize(5, (1, 1, 1))] = 1.0
        fine = coarse.similar("fine")
        prolongate_p1(coarse, fine, 3)
        back = coarse.similar("back")
        restrict_p1(fine, back, 3)
        # 1 + 14 neighbours * 0.5^2
        assert back.data(2)[0, linearize(5, (1, 1, 1))] == pytest.approx(4.5)

    @pytest.mark.parametrize("fine_level", [3, pytest.param(4, marks=pytest.mark.slow)])
    def test_restriction_is_adjoint(self, cube, randomize, fine_level):
        levels = (fine_level - 1, fine_level)
        xc = randomize(allocate(p1(), cube, levels, "xc"), fine_level - 1)
        yf = randomize(xc.similar("yf"), fine_level)
        pxc = xc.similar("pxc")
        ryf = xc.similar("ryf")
        prolongate_p1(xc, pxc, fine_level)
        restrict_p1(yf, ryf, fine_level)
        assert dot(pxc, yf, fine_level) == pytest.approx(dot(xc, ryf, fine_level - 1), rel=1e-12)

    def test_mismatched_spaces(self, ref_tet):
        a = allocate(p1(), ref_tet, (2, 3))
        b = allocate(p1(Layout.SOA), ref_tet, (2, 3))
        with pytest.raises(DescriptorMismatchError):
            prolongate_p1(a, b, 3)
        with pytest.raises(DescriptorMismatchError):
            restrict_p1(allocate(p2(), ref_tet, (2, 3)), a, 3)

    def test_missing_level(self, ref_tet):
        with pytest.raises(LevelError):
            prolongate_p1(allocate(p1(), ref_tet, (3, 3)), allocate(p1(), ref_tet, (3, 3)), 3)


class TestMultigrid:
    def test_gauss_seidel_convergence_factor(self, cube, randomize):
        h = _hierarchy(cube, (2, 3))
        rhs, x = _random_guess(cube, (2, 3), 3, randomize)
        assert measure_convergence_factor(h, 3, rhs, x) < 0.5

    @pytest.mark.parametrize(
        "smoother",
        [
            SmootherConfig(kind=SmootherKind.JACOBI, nu1=2, nu2=2),
            SmootherConfig(kind=SmootherKind.CHEBYSHEV),
            SmootherConfig(kind=SmootherKind.GAUSS_SEIDEL, nu1=2, nu2=2),
        ],
        ids=["jacobi", "chebyshev", "gs"],
    )
    def test_smoothers_converge(self, cube, randomize, smoother):
        h = _hierarchy(cube, (2, 3), smoother)
        rhs, x = _random_guess(cube, (2, 3), 3, randomize)
        report = solve_vcycles(h, 3, rhs, x, cycles=5)
        assert report.vcycles == 5
        assert report.records[-1].residual < 0.1 * report.records[0].residual

    def test_coarse_level_is_cg_solve(self, cube, randomize):
        h = _hierarchy(cube, (2, 3))
        rhs, x = _random_guess(cube, (2, 3), 2, randomize)
        load_vector(rhs, 2, sine_source)
        v_cycle(h, 2, rhs, x)
        assert h.residual_norm(rhs, x, 2) < 1e-10 * norm(rhs, 2)

    def test_tolerance_stops_early(self, cube):
        h = _hierarchy(cube, (2, 3))
        rhs = allocate(p1(), cube, (2, 3), "rhs")
        load_vector(rhs, 3, sine_source)
        report = solve_vcycles(h, 3, rhs, rhs.similar("x"), cycles=50, tol=1e-6)
        assert report.vcycles < 50
        assert report.records[-1].residual <= 1e-6 * report.records[0].residual

    def test_errors_recorded(self, cube):
        h = _hierarchy(cube, (2, 3))
        rhs = allocate(p1(), cube, (2, 3), "rhs")
        load_vector(rhs, 3, sine_source)
        report = solve_vcycles(h, 3, rhs, rhs.similar("x"), cycles=3, exact=sine_solution)
        assert all(r.error is not None for r in report.records[1:])
        assert report.errors[3] == report.records[-1].error

    def test_divergence_detected(self, cube, randomize):
        h = _hierarchy(cube, (2, 3), divergence_factor=1e-30)
        rhs, x = _random_guess(cube, (2, 3), 3, randomize)
        with pytest.raises(SolverDivergenceError):
            solve_vcycles(h, 3, rhs, x, cycles=3)

    def test_hierarchy_levels(self, cube):
        with pytest.raises(LevelError):
            _hierarchy(cube, (2, 3), coarse_level=3)
        h = _hierarchy(cube, (2, 3))
        x = allocate(p1(), cube, (2, 4))
        with pytest.raises(LevelError):
            v_cycle(h, 4, x.similar(), x)

    def test_fmg_discretisation_error(self, cube):
        levels = (2, 4)
        h = _hierarchy(cube, levels, cycles_per_level=2)
        rhs = allocate(p1(), cube, levels, "rhs")
        for level in range(2, 5):
            load_vector(rhs, level, sine_source)
        report = fmg(h, 4, rhs, rhs.similar("x"), exact=sine_solution)
        assert report.vcycles == 4
        e2, e3, e4 = (report.errors[level] for level in (2, 3, 4))
        assert e2 > e3 > e4
        assert math.log2(e3 / e4) > 1.5

    def test_fmg_error_close_to_discrete_solution(self, cube):
        levels = (2, 3)
        h = _hierarchy(cube, levels)
        rhs = allocate(p1(), cube, levels, "rhs")
        for level in levels:
            load_vector(rhs, level, sine_source)
        report = fmg(h, 3, rhs, rhs.similar("x"), exact=sine_solution)
        assert report.vcycles == 5
        tight = rhs.similar("tight")
        cg(h.op, rhs, tight, 3, tol=1e-12)
        discrete = l2_error(tight, 3, sine_solution)
        assert report.errors[3] == pytest.approx(discrete, rel=0.05)

    @pytest.mark.slow
    def test_convergence_factor_level_independent(self, cube, randomize):
        factors = []
        for level in (3, 4, 5):
            h = _hierarchy(cube, (2, level))
            rhs, x = _random_guess(cube, (2, level), level, randomize)
            factors.append(measure_convergence_factor(h, level, rhs, x))
        assert max(factors) <= 0.5
        assert max(factors) - min(factors) < 0.1


class TestErrorAndLoad:
    def test_linear_is_exact(self, cube):
        def f(x):
            return 1 + x[:, 0] + x[:, 1] - x[:, 2]

        fn = allocate(p1(), cube, (2, 2))
        interpolate(fn, 2, f)
        assert l2_error(fn, 2, f) < 1e-13

    def test_interpolation_error_second_order(self, ref_tet):
        def f(x):
            return x[:, 0] ** 2

        errors = []
        for level in (2, 3):
            fn = allocate(p1(), ref_tet, (level, level))
            interpolate(fn, level, f)
            errors.append(l2_error(fn, level, f))
        assert 3.5 < errors[0] / errors[1] < 4.5

    def test_l2_error_needs_p1(self, ref_tet):
        with pytest.raises(DescriptorMismatchError):
            l2_error(allocate(p2(), ref_tet, (2, 2)), 2, sine_solution)

    def test_load_vector_is_mass_times_interpolant(self, cube):
        rhs = allocate(p1(), cube, (2, 2))
        load_vector(rhs, 2, lambda x: np.ones(len(x)))
        enum = enumerate_global(p1(), cube, 2)
        expected = assemble(FormId.mass(), cube, 2) @ np.ones(enum.n)
        expected[enum.dirichlet_ids] = 0.0
        np.testing.assert_allclose(enum.gather(rhs), expected, rtol=1e-13, atol=1e-16)

    def test_load_vector_boundary_values(self, ref_tet):
        rhs = allocate(p1(), ref_tet, (2, 2))
        load_vector(rhs, 2, sine_source, boundary=lambda x: 2 + x[:, 2])
        mask = rhs.interface(2).dirichlet
        assert rhs.data(2)[0, linearize(5, (0, 0, 4))] == pytest.approx(3.0)
        assert (rhs.data(2)[mask] >= 2.0).all()

    def test_write_csv(self):
        stream = io.StringIO()
        rows = [
            StudyRow(level=2, dofs=125, l2_error=1e-2, residual=1e-12, seconds=0.1),
            StudyRow(level=3, dofs=729, l2_error=2.5e-3, order=2.0, residual=1e-12, seconds=0.4),
        ]
        write_csv(rows, stream, StudyRow.CSV_FIELDS)
        lines = stream.getvalue().splitlines()
        assert lines[0] == "level,dofs,l2_error,order,residual,seconds"
        assert lines[1].split(",")[3] == ""
        assert lines[2].split(",")[3] == "2.000"

    def test_iteration_records_csv(self, cube):
        h = _hierarchy(cube, (2, 3))
        rhs = allocate(p1(), cube, (2, 3), "rhs")
        load_vector(rhs, 3, sine_source)
        report = solve_vcycles(h, 3, rhs, rhs.similar("x"), cycles=2, exact=sine_solution)
        stream = io.StringIO()
        write_csv(report.records, stream, IterationRecord.CSV_FIELDS)
        lines = stream.getvalue().splitlines()
        assert lines[0] == "level,cycle,residual,error,seconds"
        assert len(lines) == 4
        assert lines[1].split(",")[:2] == ["3", "0"]
        assert lines[1].split(",")[3] == ""
