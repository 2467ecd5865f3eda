"""Krylov and geometric multigrid solvers on the matrix-free P1 operators.

Coarse problems are rediscretised on every level. Dirichlet values are
imposed on the level being solved; the correction problems on coarser levels
have homogeneous Dirichlet rows.
"""
import csv
import math
import time
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from tetmg.core.config import settings
from tetmg.core.exceptions import (
    DescriptorMismatchError,
    LevelError,
    MissingPrerequisiteError,
    SolverBreakdownError,
    SolverDivergenceError,
    TetGridError,
)
from tetmg.core.metrics import CG_ITERATION_COUNT, SMOOTHER_SWEEP_COUNT, SOLVE_DURATION, VCYCLE_COUNT
from tetmg.models.mesh import CoarseMesh
from tetmg.models.space import SpaceDescriptor, p1
from tetmg.models.subgroups import CELL_SUBGROUPS
from tetmg.schemas.report import CGReport, IterationRecord, SolveReport
from tetmg.schemas.solver import MultigridConfig, SmootherConfig, SmootherKind
from tetmg.services.fe_function import (
    FEFunction,
    PointFunction,
    allocate,
    axpy,
    dot,
    interpolate,
    norm,
    physical_vertices,
    sum_replicas,
    sync_broadcast,
)
from tetmg.services.indexing import contains, index_set, linearize_array, vertex_offsets_of, vertex_width
from tetmg.services.operators import (
    QUADRATURE_RULES,
    ApplyMode,
    BoundaryCondition,
    FormId,
    P1Operator,
    SweepDirection,
    apply_elementwise,
)

logger = structlog.get_logger()


def _scratch(like: FEFunction, level: int, name: str) -> FEFunction:
    return FEFunction(like.descriptor, like.mesh, (level, level), name)


def _dirichlet(fn: FEFunction, level: int) -> np.ndarray:
    return fn.interface(level).dirichlet


def residual(op: P1Operator, rhs: FEFunction, x: FEFunction, out: FEFunction, level: int) -> None:
    """out <- rhs - A x"""
    op.apply(x, out, level)
    data = out.data(level)
    np.subtract(rhs.data(level), data, out=data)


def cg(
    op: P1Operator,
    b: FEFunction,
    x: FEFunction,
    level: int,
    tol: float = 1e-10,
    maxit: int = 1000,
) -> CGReport:
    """Conjugate gradients on the Dirichlet-constrained system.

    Dirichlet DoFs are set to ``b`` first; their residual then stays zero and
    the iteration runs on the symmetric free block.
    """
    xd, bd = x.data(level), b.data(level)
    if op.bc == BoundaryCondition.DIRICHLET_IDENTITY:
        fixed = _dirichlet(x, level)
        xd[fixed] = bd[fixed]
    r = _scratch(x, level, "cg_r")
    p = _scratch(x, level, "cg_p")
    ap = _scratch(x, level, "cg_ap")

    residual(op, b, x, r, level)
    p.data(level)[...] = r.data(level)
    b_norm = norm(b, level)
    scale = b_norm if b_norm > 0 else 1.0
    rr = dot(r, r, level)
    history = [math.sqrt(rr)]
    iterations = 0
    while history[-1] > tol * scale and iterations < maxit:
        op.apply(p, ap, level)
        pap = dot(p, ap, level)
        if pap <= 0:
            raise SolverBreakdownError(
                "non-positive curvature in CG", {"iteration": iterations, "pAp": pap}
            )
        alpha = rr / pap
        axpy(x, alpha, p, level)
        axpy(r, -alpha, ap, level)
        rr_new = dot(r, r, level)
        if not math.isfinite(rr_new):
            raise SolverDivergenceError("CG produced a non-finite residual", {"iteration": iterations})
        p.data(level)[...] = r.data(level) + (rr_new / rr) * p.data(level)
        rr = rr_new
        iterations += 1
        history.append(math.sqrt(rr))

    if settings.METRICS_ENABLED:
        CG_ITERATION_COUNT.inc(iterations)
    report = CGReport(
        iterations=iterations,
        residual=history[-1],
        relative_residual=history[-1] / scale,
        converged=history[-1] <= tol * scale,
        history=history,
    )
    logger.debug("CG finished", level=level, iterations=iterations, residual=report.residual)
    return report


def estimate_lambda_max(
    op: P1Operator,
    diag: FEFunction,
    level: int,
    iterations: Optional[int] = None,
    seed: Optional[int] = None,
    safety: Optional[float] = None,
) -> float:
    """Safety factor times the Rayleigh quotient of D^-1 A after power iteration"""
    iterations = iterations or settings.POWER_ITERATIONS
    seed = settings.DEFAULT_SEED if seed is None else seed
    safety = safety or settings.LAMBDA_SAFETY
    d = diag.data(level)
    if (d == 0).any():
        raise SolverBreakdownError("zero diagonal entry", {"level": level})
    fixed = _dirichlet(diag, level) if op.bc == BoundaryCondition.DIRICHLET_IDENTITY else None

    v = _scratch(diag, level, "power_v")
    av = _scratch(diag, level, "power_av")
    v.data(level)[...] = np.random.default_rng(seed).random(d.shape)
    sync_broadcast(v, level)
    if fixed is not None:
        v.data(level)[fixed] = 0.0
    for _ in range(iterations):
        op.apply(v, av, level)
        w = av.data(level) / d
        if fixed is not None:
            w[fixed] = 0.0
        v.data(level)[...] = w
        v.data(level)[...] /= norm(v, level)

    op.apply(v, av, level)
    dv = _scratch(diag, level, "power_dv")
    dv.data(level)[...] = d * v.data(level)
    rayleigh = dot(v, av, level) / dot(v, dv, level)
    logger.debug("Spectral estimate", level=level, rayleigh=rayleigh)
    return safety * rayleigh


def _jacobi(op, diag, rhs, x, level, omega, sweeps) -> None:
    r = _scratch(x, level, "jacobi_r")
    d = diag.data(level)
    for _ in range(sweeps):
        residual(op, rhs, x, r, level)
        x.data(level)[...] += omega * r.data(level) / d


def _chebyshev(op, diag, rhs, x, level, lo, hi, order, sweeps) -> None:
    """Diagonally preconditioned Chebyshev iteration on [lo, hi]"""
    center, half = (hi + lo) / 2, (hi - lo) / 2
    r = _scratch(x, level, "cheb_r")
    p = _scratch(x, level, "cheb_p")
    d = diag.data(level)
    for _ in range(sweeps):
        residual(op, rhs, x, r, level)
        alpha = 0.0
        for i in range(1, order + 1):
            z = r.data(level) / d
            if i == 1:
                p.data(level)[...] = z
                alpha = 1 / center
            else:
                beta = 0.5 * (half * alpha) ** 2 if i == 2 else (half * alpha / 2) ** 2
                alpha = 1 / (center - beta / alpha)
                p.data(level)[...] = z + beta * p.data(level)
            axpy(x, alpha, p, level)
            if i < order:
                residual(op, rhs, x, r, level)


def smooth(
    config: SmootherConfig,
    op: P1Operator,
    rhs: FEFunction,
    x: FEFunction,
    level: int,
    sweeps: int,
    pre: bool = True,
    lambda_max: Optional[float] = None,
) -> None:
    """``sweeps`` smoothing steps; Gauss-Seidel runs forward before, backward after"""
    if sweeps <= 0:
        return
    kind = SmootherKind(config.kind)
    if kind == SmootherKind.GAUSS_SEIDEL:
        if not op.supports_gauss_seidel:
            raise MissingPrerequisiteError(
                "Gauss-Seidel needs a constant-coefficient form", {"form": op.form.name}
            )
        direction = SweepDirection.FORWARD if pre else SweepDirection.BACKWARD
        for _ in range(sweeps):
            op.gauss_seidel(rhs, x, level, direction)
        return
    diag = op.diagonal(level)
    if kind == SmootherKind.JACOBI:
        _jacobi(op, diag, rhs, x, level, config.omega, sweeps)
    else:
        if lambda_max is None:
            raise MissingPrerequisiteError("Chebyshev needs a spectral estimate", {"level": level})
        _chebyshev(
            op, diag, rhs, x, level,
            config.lo * lambda_max, config.hi * lambda_max, config.order, sweeps,
        )
    if settings.METRICS_ENABLED:
        SMOOTHER_SWEEP_COUNT.labels(kind=kind.value).inc(sweeps)


# fine-lattice parity -> the two endpoint offsets of the coarse edge it bisects
_PARITY_ENDPOINTS: Dict[Tuple[int, int, int], Tuple[Tuple[int, int, int], Tuple[int, int, int]]] = {
    (0, 0, 0): ((0, 0, 0), (0, 0, 0)),
    (1, 0, 0): ((-1, 0, 0), (1, 0, 0)),
    (0, 1, 0): ((0, -1, 0), (0, 1, 0)),
    (0, 0, 1): ((0, 0, -1), (0, 0, 1)),
    (1, 1, 0): ((1, -1, 0), (-1, 1, 0)),
    (1, 0, 1): ((1, 0, -1), (-1, 0, 1)),
    (0, 1, 1): ((0, 1, -1), (0, -1, 1)),
    (1, 1, 1): ((-1, 1, -1), (1, -1, 1)),
}


@lru_cache(maxsize=16)
def transfer_stencil(fine_level: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coarse vertex offsets (left, right) averaged into each fine vertex"""
    fine = index_set(vertex_width(fine_level))
    wc = vertex_width(fine_level - 1)
    parity = fine % 2
    left = np.empty(len(fine), dtype=np.int64)
    right = np.empty(len(fine), dtype=np.int64)
    for key, (da, db) in _PARITY_ENDPOINTS.items():
        rows = np.nonzero((parity == np.asarray(key)).all(axis=1))[0]
        if not len(rows):
            continue
        a = (fine[rows] + np.asarray(da)) // 2
        b = (fine[rows] + np.asarray(db)) // 2
        for p in (a[0], b[0], a[-1], b[-1]):
            if not contains(wc, tuple(p)):
                raise TetGridError("coarse endpoint outside the lattice", {"parity": key})
        left[rows] = linearize_array(wc, a)
        right[rows] = linearize_array(wc, b)
    left.setflags(write=False)
    right.setflags(write=False)
    return left, right


def _check_transfer(coarse: FEFunction, fine: FEFunction, fine_level: int) -> None:
    if not coarse.descriptor.is_p1 or coarse.descriptor != fine.descriptor or coarse.mesh is not fine.mesh:
        raise DescriptorMismatchError("transfers need two P1 functions on one mesh")
    coarse.check_level(fine_level - 1)
    fine.check_level(fine_level)


def prolongate_p1(coarse: FEFunction, fine: FEFunction, fine_level: int, mode: ApplyMode = ApplyMode.REPLACE) -> None:
    """Linear interpolation from ``fine_level - 1`` onto ``fine_level``"""
    _check_transfer(coarse, fine, fine_level)
    left, right = transfer_stencil(fine_level)
    xc = coarse.data(fine_level - 1)
    values = 0.5 * (xc[:, left] + xc[:, right])
    if ApplyMode(mode) == ApplyMode.REPLACE:
        fine.data(fine_level)[...] = values
    else:
        fine.data(fine_level)[...] += values


def restrict_p1(fine: FEFunction, coarse: FEFunction, fine_level: int) -> None:
    """coarse <- P^T fine, each physical fine DoF taken once through its owner"""
    _check_transfer(coarse, fine, fine_level)
    left, right = transfer_stencil(fine_level)
    owned = fine.interface(fine_level).owned
    yf = 0.5 * fine.data(fine_level) * owned
    out = coarse.data(fine_level - 1)
    n = out.shape[1]
    for c in range(out.shape[0]):
        out[c] = np.bincount(left, weights=yf[c], minlength=n) + np.bincount(
            right, weights=yf[c], minlength=n
        )
    sum_replicas(coarse.interface(fine_level - 1), out)


class GridHierarchy:
    """One operator over a level range plus per-level scratch functions"""

    def __init__(
        self,
        op: P1Operator,
        levels: Tuple[int, int],
        config: Optional[MultigridConfig] = None,
        descriptor: Optional[SpaceDescriptor] = None,
        seed: Optional[int] = None,
    ):
        self.op = op
        self.seed = settings.DEFAULT_SEED if seed is None else seed
        self.mesh: CoarseMesh = op.mesh
        self.config = config or MultigridConfig()
        self.coarse_level, self.finest_level = levels
        if self.coarse_level < self.config.coarse_level:
            raise LevelError(
                "hierarchy starts below the configured coarse level",
                {"levels": levels, "coarse_level": self.config.coarse_level},
            )
        self.descriptor = descriptor or p1()
        self.residual = allocate(self.descriptor, self.mesh, levels, "residual")
        self.coarse_rhs = allocate(self.descriptor, self.mesh, levels, "coarse_rhs")
        self.correction = allocate(self.descriptor, self.mesh, levels, "correction")
        self._lambda: Dict[int, float] = {}

    def __repr__(self) -> str:
        return f"GridHierarchy({self.op!r}, levels=[{self.coarse_level}, {self.finest_level}])"

    def check_level(self, level: int) -> None:
        if not self.coarse_level <= level <= self.finest_level:
            raise LevelError(
                f"level {level} outside the hierarchy",
                {"levels": (self.coarse_level, self.finest_level)},
            )

    def lambda_max(self, level: int) -> float:
        if level not in self._lambda:
            self._lambda[level] = estimate_lambda_max(self.op, self.op.diagonal(level), level, seed=self.seed)
        return self._lambda[level]

    def residual_norm(self, rhs: FEFunction, x: FEFunction, level: int) -> float:
        residual(self.op, rhs, x, self.residual, level)
        return norm(self.residual, level)


def _smooth(h: GridHierarchy, rhs, x, level, sweeps, pre) -> None:
    config = h.config.smoother
    lam = h.lambda_max(level) if config.kind == SmootherKind.CHEBYSHEV and sweeps > 0 else None
    smooth(config, h.op, rhs, x, level, sweeps, pre, lam)


def _cycle(h: GridHierarchy, level: int, rhs: FEFunction, x: FEFunction) -> None:
    config = h.config
    if level == h.coarse_level:
        cg(h.op, rhs, x, level, config.coarse_tol, config.coarse_maxit)
        return
    _smooth(h, rhs, x, level, config.smoother.nu1, pre=True)

    residual(h.op, rhs, x, h.residual, level)
    restrict_p1(h.residual, h.coarse_rhs, level)
    h.coarse_rhs.data(level - 1)[_dirichlet(h.coarse_rhs, level - 1)] = 0.0
    h.correction.data(level - 1)[...] = 0.0
    _cycle(h, level - 1, h.coarse_rhs, h.correction)

    prolongate_p1(h.correction, h.residual, level)
    h.residual.data(level)[_dirichlet(h.residual, level)] = 0.0
    axpy(x, 1.0, h.residual, level)

    _smooth(h, rhs, x, level, config.smoother.nu2, pre=False)


def v_cycle(h: GridHierarchy, level: int, rhs: FEFunction, x: FEFunction) -> None:
    """One V(nu1, nu2) cycle on ``level``; on the coarse level a tight CG solve"""
    h.check_level(level)
    rhs.check_level(level)
    x.check_level(level)
    if level > h.coarse_level and settings.METRICS_ENABLED:
        VCYCLE_COUNT.inc()
    _cycle(h, level, rhs, x)


def _impose_dirichlet(op: P1Operator, rhs: FEFunction, x: FEFunction, level: int) -> None:
    if op.bc == BoundaryCondition.DIRICHLET_IDENTITY:
        fixed = _dirichlet(x, level)
        x.data(level)[fixed] = rhs.data(level)[fixed]


def solve_vcycles(
    h: GridHierarchy,
    level: int,
    rhs: FEFunction,
    x: FEFunction,
    cycles: int,
    tol: float = 0.0,
    exact: Optional[PointFunction] = None,
) -> SolveReport:
    """Repeated V-cycles on one level until ``cycles`` or relative residual ``tol``"""
    start = time.perf_counter()
    _impose_dirichlet(h.op, rhs, x, level)
    report = SolveReport(solver="vcycle")
    r0 = h.residual_norm(rhs, x, level)
    report.records.append(IterationRecord(level=level, cycle=0, residual=r0))
    for cycle in range(1, cycles + 1):
        v_cycle(h, level, rhs, x)
        report.vcycles += 1
        res = h.residual_norm(rhs, x, level)
        _check_divergence(res, r0, h.config, level, cycle)
        report.records.append(
            IterationRecord(
                level=level,
                cycle=cycle,
                residual=res,
                error=None if exact is None else l2_error(x, level, exact),
                seconds=time.perf_counter() - start,
            )
        )
        if res <= tol * max(r0, 1e-300):
            break
    if exact is not None:
        report.errors[level] = l2_error(x, level, exact)
    if settings.METRICS_ENABLED:
        SOLVE_DURATION.labels(solver="vcycle").observe(time.perf_counter() - start)
    return report


def _check_divergence(res: float, reference: float, config: MultigridConfig, level: int, cycle: int) -> None:
    if not math.isfinite(res) or (reference > 0 and res > config.divergence_factor * reference):
        raise SolverDivergenceError(
            "multigrid iteration diverged",
            {"level": level, "cycle": cycle, "residual": res, "initial": reference},
        )


def fmg(
    h: GridHierarchy,
    finest_level: int,
    rhs: FEFunction,
    x: FEFunction,
    exact: Optional[PointFunction] = None,
) -> SolveReport:
    """Full multigrid: coarse CG solve, then per finer level prolongate and run V-cycles.

    ``rhs`` must be set on every level of the hierarchy up to ``finest_level``.
    """
    config = h.config
    h.check_level(finest_level)
    start = time.perf_counter()
    report = SolveReport(solver="fmg")

    coarse = h.coarse_level
    cg(h.op, rhs, x, coarse, config.coarse_tol, config.coarse_maxit)
    report.records.append(
        IterationRecord(
            level=coarse,
            cycle=0,
            residual=h.residual_norm(rhs, x, coarse),
            error=None if exact is None else l2_error(x, coarse, exact),
            seconds=time.perf_counter() - start,
        )
    )
    if exact is not None:
        report.errors[coarse] = report.records[-1].error

    for level in range(coarse + 1, finest_level + 1):
        prolongate_p1(x, x, level)
        _impose_dirichlet(h.op, rhs, x, level)
        r0 = h.residual_norm(rhs, x, level)
        for cycle in range(1, config.cycles_per_level + 1):
            v_cycle(h, level, rhs, x)
            report.vcycles += 1
            res = h.residual_norm(rhs, x, level)
            _check_divergence(res, r0, config, level, cycle)
            report.records.append(
                IterationRecord(
                    level=level,
                    cycle=cycle,
                    residual=res,
                    error=None if exact is None else l2_error(x, level, exact),
                    seconds=time.perf_counter() - start,
                )
            )
        if exact is not None:
            report.errors[level] = report.records[-1].error
        logger.info("FMG level done", level=level, residual=report.records[-1].residual)

    if settings.METRICS_ENABLED:
        SOLVE_DURATION.labels(solver="fmg").observe(time.perf_counter() - start)
    return report


def measure_convergence_factor(
    h: GridHierarchy,
    level: int,
    rhs: FEFunction,
    x: FEFunction,
    cycles: int = 10,
    window: Tuple[int, int] = (5, 10),
) -> float:
    """Geometric mean of the residual reduction per V-cycle over ``window``"""
    first, last = window
    if not 0 <= first < last <= cycles:
        raise ValueError("window must lie inside the cycle range")
    report = solve_vcycles(h, level, rhs, x, cycles)
    history = [r.residual for r in report.records]
    if len(history) <= last or history[first] == 0.0:
        return 0.0
    return (history[last] / history[first]) ** (1.0 / (last - first))


def l2_error(fn: FEFunction, level: int, exact: PointFunction, order: int = 2) -> float:
    """L2 norm of u_h - exact by micro-cell quadrature"""
    if not fn.descriptor.is_p1:
        raise DescriptorMismatchError("l2_error needs a P1 function", {"space": fn.descriptor.name})
    points, weights = QUADRATURE_RULES[order]
    coords = physical_vertices(fn.mesh, level)
    data = fn.data(level)
    partial: List[float] = []
    for c in range(fn.mesh.n_cells):
        for s in CELL_SUBGROUPS:
            lin = vertex_offsets_of(s, level)
            cells = coords[c][lin]
            volume = np.abs(np.linalg.det(cells[:, 1:] - cells[:, :1])) / 6.0
            uh = data[c][lin] @ points.T
            where = np.einsum("qa,nax->nqx", points, cells).reshape(-1, 3)
            u = np.asarray(exact(where), dtype=float).reshape(uh.shape)
            partial.append(float(volume @ (((uh - u) ** 2) @ weights)))
    return math.sqrt(max(math.fsum(partial), 0.0))


def load_vector(
    rhs: FEFunction,
    level: int,
    f: PointFunction,
    boundary: Optional[PointFunction] = None,
) -> None:
    """rhs <- M I(f) with Dirichlet rows set to the boundary values (zero by default)"""
    source = _scratch(rhs, level, "f")
    interpolate(source, level, f)
    apply_elementwise(FormId.mass(), source, rhs, level)
    fixed = _dirichlet(rhs, level)
    if boundary is None:
        rhs.data(level)[fixed] = 0.0
    else:
        interpolate(source, level, boundary)
        rhs.data(level)[fixed] = source.data(level)[fixed]


def write_csv(rows, stream, fields: Tuple[str, ...]) -> None:
    writer = csv.DictWriter(stream, fieldnames=list(fields))
    writer.writeheader()
    for row in rows:
        writer.writerow(row.csv_row())
