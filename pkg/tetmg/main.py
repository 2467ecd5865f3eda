"""Command-line front end.

    python -m tetmg mesh-info --mesh cube-kuhn
    python -m tetmg verify-taxonomy --level 3
    python -m tetmg poisson --min-level 2 --max-level 4 --solver fmg
    python -m tetmg export-vtk --mesh ref-tet --level 2 --out u.vtk
    python -m tetmg export-matrix --form mass --level 2 --out mass.mtx

Exit codes: 0 ok, 1 verification failure, 2 parse or usage error,
3 solver divergence, 4 I/O error. CSV goes to stdout (or --out), logs to stderr.
"""
import argparse
import math
import sys
import time
from contextlib import contextmanager
from typing import Callable, Dict, List, Optional, Sequence, TextIO

import numpy as np
import structlog
from pydantic import ValidationError

from tetmg.core.config import settings
from tetmg.core.exceptions import (
    DegenerateCellError,
    DescriptorMismatchError,
    ExportError,
    LevelError,
    MeshParseError,
    MissingPrerequisiteError,
    NonConformingMeshError,
    SolverBreakdownError,
    SolverDivergenceError,
    TetGridError,
    UnsupportedFormError,
)
from tetmg.core.logging import StructuredLogger
from tetmg.core.metrics import exposition
from tetmg.models.space import p1
from tetmg.models.subgroups import TABLE_DEVIATIONS, PrimitiveKind
from tetmg.schemas.report import StudyRow
from tetmg.schemas.run import Command, FormName, RunConfig, SolverName
from tetmg.schemas.solver import CycleKind, MultigridConfig, SmootherConfig, SmootherKind
from tetmg.services.assembly import assemble, dump_matrix_market
from tetmg.services.fe_function import allocate, interpolate
from tetmg.services.mesh_service import build_primitive_graph, load_mesh
from tetmg.services.operators import BoundaryCondition, FormId, FormKind, Kernel, make_operator
from tetmg.services.refinement_oracle import euler_check, verify_tables
from tetmg.services.solvers import (
    GridHierarchy,
    cg,
    fmg,
    l2_error,
    load_vector,
    solve_vcycles,
    write_csv,
)
from tetmg.services.vtk_writer import write_vtk

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

# first match wins
EXIT_CODES = (
    (MeshParseError, EXIT_USAGE),
    (DegenerateCellError, EXIT_USAGE),
    (NonConformingMeshError, EXIT_USAGE),
    (ValidationError, EXIT_USAGE),
    (LevelError, EXIT_USAGE),
    (UnsupportedFormError, EXIT_USAGE),
    (MissingPrerequisiteError, EXIT_USAGE),
    (DescriptorMismatchError, EXIT_USAGE),
    (SolverDivergenceError, EXIT_DIVERGENCE),
    (SolverBreakdownError, EXIT_DIVERGENCE),
    (ExportError, EXIT_IO),
    (OSError, EXIT_IO),
    (TetGridError, EXIT_VERIFY),
)

PASSING_ORDER = 1.9


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    raise exc


def exact_solution(x: np.ndarray) -> np.ndarray:
    return np.sin(math.pi * x[:, 0]) * np.sin(math.pi * x[:, 1]) * np.sin(math.pi * x[:, 2])


def source_term(x: np.ndarray) -> np.ndarray:
    return 3 * math.pi**2 * exact_solution(x)


@contextmanager
def _output(path: Optional[str]):
    if path is None:
        yield sys.stdout
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            yield handle
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}", {"path": path}) from e


def cmd_mesh_info(cfg: RunConfig, stream: TextIO) -> int:
    mesh = load_mesh(cfg.mesh, cfg.optimize_inner_edge)
    graph = build_primitive_graph(mesh)
    V, E, F, C = (PrimitiveKind.VERTEX, PrimitiveKind.EDGE, PrimitiveKind.FACE, PrimitiveKind.CELL)
    stream.write(
        f"cells {mesh.n_cells}, faces {len(mesh.faces)}, "
        f"edges {len(mesh.edges)}, vertices {mesh.n_vertices}\n"
    )
    stream.write(
        f"boundary faces {len(mesh.boundary_faces)}, dirichlet faces {len(mesh.dirichlet_faces)}\n"
    )
    stream.write(
        f"links cell-cell {graph.link_count(C, C)}, cell-face {graph.link_count(C, F)}, "
        f"face-edge {graph.link_count(F, E)}, edge-vertex {graph.link_count(E, V)}, "
        f"total {graph.link_count()}\n"
    )
    stream.write(f"volume {mesh.mesh_volume():.12g}\n")
    return EXIT_OK


def cmd_verify_taxonomy(cfg: RunConfig, stream: TextIO) -> int:
    level = cfg.max_level
    if level < 2:
        logger.warning("taxonomy incomplete below level 2", level=level)
        stream.write("warning: taxonomy incomplete below level 2\n")
    rows = verify_tables(level)
    ok = True
    for row in rows:
        if level < 2 and row.count == 0 and row.expected == 0:
            continue
        status = "ok" if row.ok else "MISMATCH"
        ok = ok and row.ok
        stream.write(
            f"{row.subgroup.label:<16} count={row.count:<7} n_tet(w)={row.expected:<7} "
            f"w={row.width:<4} published={row.published_width:<9} {status}\n"
        )
    for subgroup, note in TABLE_DEVIATIONS.items():
        stream.write(
            f"note: {subgroup.label} width {note['shipped']} (published {note['published']})\n"
        )
    euler = euler_check(level)
    stream.write(f"euler {euler}\n")
    ok = ok and euler == 1
    logger.info("Taxonomy verified", level=level, ok=ok)
    return EXIT_OK if ok else EXIT_VERIFY


def _solver_form(cfg: RunConfig) -> FormId:
    form = FormId.from_name(cfg.form.value)
    if form.kind == FormKind.MASS:
        raise UnsupportedFormError("the Poisson study needs diffusion or divkgrad")
    return form


def _hierarchy(cfg: RunConfig, mesh, form: FormId, finest: int) -> GridHierarchy:
    kernel, smoother = cfg.kernel, cfg.smoother
    if not form.is_constant:
        # no stencil tables for variable coefficients
        if kernel == Kernel.STENCIL:
            logger.warning("Stencil kernel unavailable, using element-wise", form=form.name)
            kernel = Kernel.ELEMENTWISE
        if smoother == SmootherKind.GAUSS_SEIDEL:
            logger.warning("Gauss-Seidel unavailable, using Chebyshev", form=form.name)
            smoother = SmootherKind.CHEBYSHEV
    op = make_operator(form, mesh, kernel, BoundaryCondition.DIRICHLET_IDENTITY, cfg.threads)
    config = MultigridConfig(
        cycle=CycleKind.FMG if cfg.solver == SolverName.FMG else CycleKind.V,
        cycles_per_level=max(cfg.cycles, 1),
        smoother=SmootherConfig(kind=smoother, nu1=cfg.nu1, nu2=cfg.nu2),
    )
    return GridHierarchy(op, (config.coarse_level, finest), config, p1(cfg.layout), seed=cfg.seed)


def run_poisson(cfg: RunConfig) -> List[StudyRow]:
    """Manufactured-solution study: -lap u = 3 pi^2 u, u = sin sin sin, u = 0 on the boundary"""
    mesh = load_mesh(cfg.mesh, cfg.optimize_inner_edge)
    form = _solver_form(cfg)
    h = _hierarchy(cfg, mesh, form, cfg.max_level)
    levels = (h.coarse_level, cfg.max_level)
    rhs = allocate(h.descriptor, mesh, levels, "rhs")
    x = allocate(h.descriptor, mesh, levels, "u_h")
    for level in range(levels[0], levels[1] + 1):
        load_vector(rhs, level, source_term)

    results: Dict[int, tuple] = {}
    start = time.perf_counter()
    if h.config.cycle == CycleKind.FMG:
        report = fmg(h, cfg.max_level, rhs, x, exact_solution)
        for record in report.records:
            results[record.level] = (report.errors[record.level], record.residual, record.seconds)
    else:
        for level in range(cfg.min_level, cfg.max_level + 1):
            t0 = time.perf_counter()
            if cfg.solver == SolverName.CG:
                cg_report = cg(h.op, rhs, x, level, cfg.tol, maxit=10 * x.interface(level).n_owned)
                if not cg_report.converged:
                    logger.warning("CG stopped before tolerance", level=level, residual=cg_report.residual)
                residual = cg_report.residual
            else:
                vc_report = solve_vcycles(h, level, rhs, x, max(cfg.cycles, 1), cfg.tol)
                residual = vc_report.records[-1].residual
            results[level] = (l2_error(x, level, exact_solution), residual, time.perf_counter() - t0)

    rows: List[StudyRow] = []
    for level in range(cfg.min_level, cfg.max_level + 1):
        error, residual, seconds = results[level]
        order = None
        if rows and error > 0:
            order = math.log2(rows[-1].l2_error / error)
        rows.append(
            StudyRow(
                level=level,
                dofs=x.interface(level).n_owned,
                l2_error=error,
                order=order,
                residual=residual,
                seconds=seconds,
            )
        )
    logger.info("Poisson study done", solver=cfg.solver.value, seconds=time.perf_counter() - start)
    return rows


def cmd_poisson(cfg: RunConfig, stream: TextIO) -> int:
    rows = run_poisson(cfg)
    write_csv(rows, stream, StudyRow.CSV_FIELDS)
    last = rows[-1].order
    if last is not None and last < PASSING_ORDER:
        logger.warning("Observed order below threshold", order=last, threshold=PASSING_ORDER)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_export_vtk(cfg: RunConfig, stream: TextIO) -> int:
    mesh = load_mesh(cfg.mesh, cfg.optimize_inner_edge)
    level = cfg.max_level
    descriptor = p1(cfg.layout)
    u = allocate(descriptor, mesh, (level, level), cfg.name)
    interpolate(u, level, exact_solution)
    fields = {cfg.name: u}
    if cfg.solve:
        form = _solver_form(cfg)
        h = _hierarchy(cfg, mesh, form, max(level, settings.COARSE_LEVEL))
        rhs = allocate(h.descriptor, mesh, (h.coarse_level, level), "rhs")
        x = allocate(h.descriptor, mesh, (h.coarse_level, level), f"{cfg.name}_h")
        for lv in range(h.coarse_level, level + 1):
            load_vector(rhs, lv, source_term)
        fmg(h, level, rhs, x)
        solved = allocate(descriptor, mesh, (level, level), f"{cfg.name}_h")
        solved.data(level)[...] = x.data(level)
        fields[solved.name] = solved
    path = write_vtk(cfg.out or "solution.vtk", mesh, level, fields, title=f"tetmg level {level}")
    stream.write(f"{path}\n")
    return EXIT_OK


def cmd_export_matrix(cfg: RunConfig, stream: TextIO) -> int:
    mesh = load_mesh(cfg.mesh, cfg.optimize_inner_edge)
    bc = BoundaryCondition.DIRICHLET_IDENTITY if cfg.dirichlet else BoundaryCondition.NONE
    matrix = assemble(FormId.from_name(cfg.form.value), mesh, cfg.max_level, bc)
    path = dump_matrix_market(
        matrix, cfg.out or "matrix.mtx", comment=f"tetmg {cfg.form.value} level {cfg.max_level}"
    )
    stream.write(f"{path} n={matrix.shape[0]} nnz={matrix.nnz}\n")
    return EXIT_OK


COMMANDS: Dict[Command, Callable[[RunConfig, TextIO], int]] = {
    Command.MESH_INFO: cmd_mesh_info,
    Command.VERIFY_TAXONOMY: cmd_verify_taxonomy,
    Command.POISSON: cmd_poisson,
    Command.EXPORT_VTK: cmd_export_vtk,
    Command.EXPORT_MATRIX: cmd_export_matrix,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mesh", default="cube-kuhn", help="mesh file or ref-tet | cube-kuhn | two-tets (default: cube-kuhn)")
    common.add_argument("--level", type=int, help="single refinement level (sets min and max)")
    common.add_argument("--min-level", type=int, help="lowest reported level")
    common.add_argument("--max-level", type=int, help="finest level")
    common.add_argument("--form", choices=[f.value for f in FormName], default="diffusion")
    common.add_argument("--kernel", choices=["elementwise", "stencil"], default="stencil")
    common.add_argument("--layout", choices=["aos", "soa"], default="aos")
    common.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    common.add_argument("--out", help="output path (default: stdout for CSV)")
    common.add_argument("--threads", type=int, default=settings.THREADS, help="macro-cell worker threads (default: 1)")
    common.add_argument("--optimize-inner-edge", action="store_true", help="pick the shortest inner edge per macro-cell")
    common.add_argument("--metrics", action="store_true", help="print Prometheus counters to stderr on exit")
    common.add_argument("--log-level", default=None)
    common.add_argument("--log-format", choices=["console", "json"], default=None)

    parser = argparse.ArgumentParser(prog="tetmg", description="Matrix-free multigrid on block-structured tetrahedral grids")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser(Command.MESH_INFO.value, parents=[common], help="primitive counts of a coarse mesh")
    sub.add_parser(Command.VERIFY_TAXONOMY.value, parents=[common], help="check subgroup tables against refinement")

    poisson = sub.add_parser(Command.POISSON.value, parents=[common], help="manufactured-solution convergence study")
    poisson.add_argument("--solver", choices=[s.value for s in SolverName], default="fmg")
    poisson.add_argument("--smoother", choices=["gs", "jacobi", "chebyshev"], default="gs")
    poisson.add_argument("--nu1", type=int, default=1)
    poisson.add_argument("--nu2", type=int, default=1)
    poisson.add_argument("--cycles", type=int, default=settings.CYCLES_PER_LEVEL)
    poisson.add_argument("--tol", type=float, default=1e-10)

    vtk = sub.add_parser(Command.EXPORT_VTK.value, parents=[common], help="write a legacy VTK file")
    vtk.add_argument("--name", default="u", help="point-data field name (default: u)")
    vtk.add_argument("--solve", action="store_true", help="also solve the Poisson problem and export it")
    vtk.add_argument("--smoother", choices=["gs", "jacobi", "chebyshev"], default="gs")

    matrix = sub.add_parser(Command.EXPORT_MATRIX.value, parents=[common], help="write the assembled matrix (MatrixMarket)")
    matrix.add_argument("--no-dirichlet", dest="dirichlet", action="store_false", help="keep boundary rows")
    return parser


_DEFAULT_LEVELS = {Command.POISSON: (2, 4), Command.VERIFY_TAXONOMY: (2, 2)}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    command = Command(args.command)
    lo, hi = _DEFAULT_LEVELS.get(command, (2, 2))
    if args.level is not None:
        lo = hi = args.level
    lo = args.min_level if args.min_level is not None else lo
    hi = args.max_level if args.max_level is not None else max(hi, lo)
    values = {
        k: v
        for k, v in vars(args).items()
        if v is not None and k not in ("command", "level", "min_level", "max_level", "log_level", "log_format")
    }
    return RunConfig(command=command, min_level=lo, max_level=hi, **values)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    StructuredLogger.configure_logging(args.log_level, args.log_format)
    try:
        cfg = config_from_args(args)
    except ValidationError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE

    try:
        with _output(cfg.out if cfg.command == Command.POISSON else None) as stream:
            code = COMMANDS[cfg.command](cfg, stream)
    except Exception as e:
        code = exit_code_for(e)
        message = getattr(e, "message", str(e))
        logger.error("Command failed", command=cfg.command.value, error=message, exit_code=code)
        sys.stderr.write(f"error: {message}\n")
    if cfg.metrics:
        sys.stderr.write(exposition())
    return code


if __name__ == "__main__":
    sys.exit(main())
