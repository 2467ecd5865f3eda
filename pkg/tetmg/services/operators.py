"""Matrix-free P1 operators on refined macro-cells.

Two kernels share one set of local matrices: the element-wise kernel loops
over the micro-cells of the six cell subgroups and scatter-adds local
products; the stencil kernel applies one precomputed 15-point row to every
macro-interior vertex and falls back to the element contributions on the
macro boundary. Both finish with ``sync_additive`` and, optionally, identity
rows on Dirichlet DoFs.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from tetmg.core.config import settings
from tetmg.core.exceptions import (
    DegenerateCellError,
    DescriptorMismatchError,
    IndexRangeError,
    MissingPrerequisiteError,
    SolverBreakdownError,
    TetGridError,
    UnsupportedFormError,
)
from tetmg.core.metrics import OPERATOR_APPLY_COUNT, SMOOTHER_SWEEP_COUNT
from tetmg.models.mesh import CoarseMesh
from tetmg.models.space import p1
from tetmg.models.subgroups import CELL_SUBGROUPS, SUBGROUP_TABLE, Lattice, SubgroupId
from tetmg.services.fe_function import (
    FEFunction,
    InterfaceMap,
    PointFunction,
    build_interface_map,
    physical_vertices,
    sum_replicas,
)
from tetmg.services.indexing import (
    contains,
    index_set,
    linearize_array,
    micro_primitive_vertices,
    n_tet,
    require_taxonomy_level,
    vertex_offsets_of,
    vertex_width,
    width,
)

logger = structlog.get_logger()

DEGENERATE_TOL = 1e-12

_RULE2_A = 0.5854101966249685
_RULE2_B = 0.1381966011250105


def _frozen(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


# order -> (barycentric points, weights summing to one)
QUADRATURE_RULES: Dict[int, Tuple[np.ndarray, np.ndarray]] = {
    1: (_frozen([[0.25, 0.25, 0.25, 0.25]]), _frozen([1.0])),
    2: (
        _frozen(
            [
                [_RULE2_A, _RULE2_B, _RULE2_B, _RULE2_B],
                [_RULE2_B, _RULE2_A, _RULE2_B, _RULE2_B],
                [_RULE2_B, _RULE2_B, _RULE2_A, _RULE2_B],
                [_RULE2_B, _RULE2_B, _RULE2_B, _RULE2_A],
            ]
        ),
        _frozen([0.25, 0.25, 0.25, 0.25]),
    ),
    3: (
        _frozen(
            [
                [0.25, 0.25, 0.25, 0.25],
                [0.5, 1 / 6, 1 / 6, 1 / 6],
                [1 / 6, 0.5, 1 / 6, 1 / 6],
                [1 / 6, 1 / 6, 0.5, 1 / 6],
                [1 / 6, 1 / 6, 1 / 6, 0.5],
            ]
        ),
        _frozen([-0.8, 0.45, 0.45, 0.45, 0.45]),
    ),
}

_REF_GRADIENTS = _frozen([[-1, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])

# center first, then the +/- pairs of the seven edge directions
STENCIL_DIRECTIONS: Tuple[Lattice, ...] = (
    (0, 0, 0),
    (1, 0, 0), (-1, 0, 0),
    (0, 1, 0), (0, -1, 0),
    (0, 0, 1), (0, 0, -1),
    (1, -1, 0), (-1, 1, 0),
    (1, 0, -1), (-1, 0, 1),
    (0, 1, -1), (0, -1, 1),
    (1, -1, 1), (-1, 1, -1),
)
_DIRECTION_INDEX = {d: n for n, d in enumerate(STENCIL_DIRECTIONS)}


class FormKind(str, Enum):
    DIFFUSION = "p1_diffusion_const"
    MASS = "p1_mass_const"
    DIV_K_GRAD = "p1_div_k_grad"


class ApplyMode(str, Enum):
    REPLACE = "replace"
    ADD = "add"


class BoundaryCondition(str, Enum):
    NONE = "none"
    DIRICHLET_IDENTITY = "dirichlet_identity"


class SweepDirection(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class Kernel(str, Enum):
    ELEMENTWISE = "elementwise"
    STENCIL = "stencil"


@dataclass(frozen=True)
class FormId:
    """Bilinear form; ``coefficient`` maps (n, 3) points to (n,) values"""

    kind: FormKind
    coefficient: Optional[PointFunction] = None
    quadrature_order: int = 3

    def __post_init__(self):
        if self.kind == FormKind.DIV_K_GRAD and self.coefficient is None:
            raise UnsupportedFormError("p1_div_k_grad needs a coefficient function")
        if self.quadrature_order not in QUADRATURE_RULES:
            raise UnsupportedFormError(
                f"no quadrature rule of order {self.quadrature_order}",
                {"available": sorted(QUADRATURE_RULES)},
            )

    @classmethod
    def diffusion(cls) -> "FormId":
        return cls(FormKind.DIFFUSION)

    @classmethod
    def mass(cls) -> "FormId":
        return cls(FormKind.MASS)

    @classmethod
    def div_k_grad(cls, k: PointFunction, order: int = 3) -> "FormId":
        return cls(FormKind.DIV_K_GRAD, k, order)

    @classmethod
    def from_name(cls, name: str, coefficient: Optional[PointFunction] = None) -> "FormId":
        """CLI names: diffusion, mass, divkgrad"""
        if name == "diffusion":
            return cls.diffusion()
        if name == "mass":
            return cls.mass()
        if name == "divkgrad":
            return cls.div_k_grad(coefficient or (lambda x: np.ones(len(x))))
        raise UnsupportedFormError(f"unknown form {name!r}")

    @property
    def is_constant(self) -> bool:
        return self.kind != FormKind.DIV_K_GRAD

    @property
    def name(self) -> str:
        return self.kind.value


def _geometry(coords: np.ndarray) -> Tuple[np.ndarray, float]:
    """Physical P1 gradients (4, 3) and volume of one tetrahedron"""
    coords = np.asarray(coords, dtype=float)
    jac = (coords[1:] - coords[0]).T
    det = float(np.linalg.det(jac))
    scale = float(np.abs(coords - coords[0]).max())
    if scale == 0.0 or abs(det) <= DEGENERATE_TOL * scale**3:
        raise DegenerateCellError("degenerate element", {"det": det})
    return _REF_GRADIENTS @ np.linalg.inv(jac), abs(det) / 6.0


def _coefficient_average(form: FormId, cells: np.ndarray) -> np.ndarray:
    """Quadrature mean of k over each of the (n, 4, 3) cells"""
    points, weights = QUADRATURE_RULES[form.quadrature_order]
    where = np.einsum("qa,nax->nqx", points, cells).reshape(-1, 3)
    k = np.asarray(form.coefficient(where), dtype=float).reshape(len(cells), len(weights))
    if not (k > 0).all():
        raise UnsupportedFormError(
            "coefficient must be strictly positive", {"min": float(k.min())}
        )
    return k @ weights


def local_matrix(form: FormId, cell_coords) -> np.ndarray:
    """4x4 element matrix of ``form`` on the tetrahedron ``cell_coords``"""
    grads, volume = _geometry(cell_coords)
    if form.kind == FormKind.MASS:
        return volume / 20.0 * (np.ones((4, 4)) + np.eye(4))
    stiffness = volume * (grads @ grads.T)
    if form.kind == FormKind.DIFFUSION:
        return stiffness
    coords = np.asarray(cell_coords, dtype=float)[None]
    return float(_coefficient_average(form, coords)[0]) * stiffness


@dataclass(frozen=True)
class ElementMatrix:
    values: np.ndarray
    # (subgroup, lattice index) of each local vertex, the scatter map m_T
    addresses: Tuple[Tuple[SubgroupId, Lattice], ...]


def element_matrix(
    form: FormId, mesh: CoarseMesh, level: int, cell: int, subgroup: SubgroupId, index: Lattice
) -> ElementMatrix:
    vertices = micro_primitive_vertices(subgroup, index, level)
    lin = linearize_array(vertex_width(level), np.asarray(vertices))
    coords = physical_vertices(mesh, level)[cell][lin]
    return ElementMatrix(
        values=local_matrix(form, coords),
        addresses=tuple((SubgroupId.V, tuple(v)) for v in vertices),
    )


@dataclass(frozen=True, eq=False)
class ElementData:
    """Local matrices of every (macro-cell, cell subgroup) pair on one level.

    On an affine macro-cell all micro-cells of one subgroup are translates, so
    one matrix per pair suffices. Variable coefficients scale it per instance.
    """

    level: int
    matrices: np.ndarray
    factors: Optional[Tuple[Tuple[np.ndarray, ...], ...]]


@lru_cache(maxsize=32)
def element_data(form: FormId, mesh: CoarseMesh, level: int) -> ElementData:
    require_taxonomy_level(level)
    points = physical_vertices(mesh, level)
    base = form if form.is_constant else FormId.diffusion()
    matrices = np.zeros((mesh.n_cells, len(CELL_SUBGROUPS), 4, 4))
    factors: List[Tuple[np.ndarray, ...]] = []
    for c in range(mesh.n_cells):
        per_cell = []
        for si, s in enumerate(CELL_SUBGROUPS):
            lin = vertex_offsets_of(s, level)
            matrices[c, si] = local_matrix(base, points[c][lin[0]])
            if not form.is_constant:
                per_cell.append(_coefficient_average(form, points[c][lin]))
        factors.append(tuple(per_cell))
    matrices.setflags(write=False)
    logger.debug("Element matrices computed", form=form.name, level=level, cells=mesh.n_cells)
    return ElementData(level, matrices, None if form.is_constant else tuple(factors))


def _for_each_cell(work: Callable[[int], None], n_cells: int, threads: Optional[int]) -> None:
    threads = threads or settings.THREADS
    if threads <= 1 or n_cells == 1:
        for c in range(n_cells):
            work(c)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(n_cells)))


def _cell_product(elements: ElementData, c: int, x: np.ndarray, instances=None) -> np.ndarray:
    """Element-wise product on one macro-cell; ``instances`` restricts each subgroup"""
    y = np.zeros_like(x)
    for si, s in enumerate(CELL_SUBGROUPS):
        lin = vertex_offsets_of(s, elements.level)
        factor = None if elements.factors is None else elements.factors[c][si]
        if instances is not None:
            lin = lin[instances[s]]
            factor = None if factor is None else factor[instances[s]]
        local = x[lin] @ elements.matrices[c, si].T
        if factor is not None:
            local *= factor[:, None]
        y += np.bincount(lin.ravel(), weights=local.ravel(), minlength=len(x))
    return y


def _check_p1(*fns: FEFunction) -> None:
    first = fns[0]
    for fn in fns:
        if not fn.descriptor.is_p1:
            raise DescriptorMismatchError(
                "operators act on P1 functions", {"space": fn.descriptor.name}
            )
        if fn.mesh is not first.mesh or fn.descriptor != first.descriptor:
            raise DescriptorMismatchError("functions live on different spaces or meshes")


def _finish(
    imap: InterfaceMap,
    out: np.ndarray,
    src: np.ndarray,
    dst: np.ndarray,
    mode: ApplyMode,
    bc: BoundaryCondition,
) -> None:
    sum_replicas(imap, out)
    if ApplyMode(mode) == ApplyMode.REPLACE:
        dst[...] = out
    else:
        dst += out
    if BoundaryCondition(bc) == BoundaryCondition.DIRICHLET_IDENTITY:
        dst[imap.dirichlet] = src[imap.dirichlet]


def apply_elementwise(
    form: FormId,
    src: FEFunction,
    dst: FEFunction,
    level: int,
    mode: ApplyMode = ApplyMode.REPLACE,
    bc: BoundaryCondition = BoundaryCondition.NONE,
    threads: Optional[int] = None,
) -> None:
    """dst (<- or +=) A src by looping over all micro-cells"""
    _check_p1(src, dst)
    elements = element_data(form, src.mesh, level)
    x = src.data(level)
    out = np.zeros_like(x)

    def work(c: int) -> None:
        out[c] = _cell_product(elements, c, x[c])

    _for_each_cell(work, src.mesh.n_cells, threads)
    _finish(src.interface(level), out, x, dst.data(level), mode, bc)
    if settings.METRICS_ENABLED:
        OPERATOR_APPLY_COUNT.labels(kernel=Kernel.ELEMENTWISE.value, form=form.name).inc()


@dataclass(frozen=True)
class StencilLattice:
    """Macro-interior vertices, their neighbour offsets and the boundary-touching cells"""

    interior: np.ndarray
    neighbours: np.ndarray
    boundary: np.ndarray
    boundary_instances: Dict[SubgroupId, np.ndarray]
    rows: Tuple[Tuple[int, Tuple[int, ...]], ...]


@lru_cache(maxsize=16)
def stencil_lattice(level: int) -> StencilLattice:
    require_taxonomy_level(level)
    N = 2**level
    idx = index_set(N + 1)
    inside = (idx > 0).all(axis=1) & (idx.sum(axis=1) < N)
    interior = np.nonzero(inside)[0]
    directions = np.asarray(STENCIL_DIRECTIONS, dtype=np.int64)
    neighbours = linearize_array(N + 1, idx[interior][:, None, :] + directions[None, :, :])
    boundary = ~inside
    touching = {}
    for s in CELL_SUBGROUPS:
        lin = vertex_offsets_of(s, level)
        touching[s] = np.nonzero(boundary[lin].any(axis=1))[0]
    rows = tuple(
        (int(v), tuple(int(n) for n in nb[1:])) for v, nb in zip(interior, neighbours)
    )
    return StencilLattice(interior, neighbours, boundary, touching, rows)


def interior_vertices(level: int) -> np.ndarray:
    """Vertex-array offsets of the macro-interior micro-vertices"""
    return stencil_lattice(level).interior


def _diagonal_array(elements: ElementData, mesh: CoarseMesh, level: int) -> np.ndarray:
    nv = n_tet(vertex_width(level))
    out = np.zeros((mesh.n_cells, nv))
    for c in range(mesh.n_cells):
        for si, s in enumerate(CELL_SUBGROUPS):
            lin = vertex_offsets_of(s, level)
            values = np.tile(np.diag(elements.matrices[c, si]), (len(lin), 1))
            if elements.factors is not None:
                values *= elements.factors[c][si][:, None]
            out[c] += np.bincount(lin.ravel(), weights=values.ravel(), minlength=nv)
    sum_replicas(build_interface_map(mesh, p1(), level), out)
    return out


@dataclass(frozen=True, eq=False)
class StencilTable:
    """Constant-coefficient rows of one form on one level, one row per macro-cell"""

    form: FormId
    mesh: CoarseMesh
    level: int
    # (n_cells, 15) in STENCIL_DIRECTIONS order
    weights: np.ndarray
    elements: ElementData
    # (n_cells, n_vertices), replicas summed
    diagonal: np.ndarray

    def row(self, cell: int) -> Dict[Lattice, float]:
        return {d: float(w) for d, w in zip(STENCIL_DIRECTIONS, self.weights[cell])}


def compute_stencil(
    form: FormId, mesh: CoarseMesh, level: int, probe: Lattice = (1, 1, 1)
) -> StencilTable:
    """Sum the local matrices of the 24 micro-cells around ``probe`` into one row"""
    if not form.is_constant:
        raise UnsupportedFormError(
            "stencil tables need a constant-coefficient form", {"form": form.name}
        )
    require_taxonomy_level(level)
    N = 2**level
    if min(probe) < 1 or sum(probe) >= N:
        raise IndexRangeError(
            f"probe {tuple(probe)} is not a macro-interior vertex", {"level": level}
        )
    elements = element_data(form, mesh, level)
    weights = np.zeros((mesh.n_cells, len(STENCIL_DIRECTIONS)))
    for si, s in enumerate(CELL_SUBGROUPS):
        offsets = SUBGROUP_TABLE[s].offsets
        w = width(s, level)
        for a in range(4):
            q = tuple(probe[n] - offsets[a][n] for n in range(3))
            if not contains(w, q):
                raise TetGridError(
                    "probe neighbourhood incomplete", {"subgroup": s.label, "index": q}
                )
            for b in range(4):
                d = tuple(offsets[b][n] - offsets[a][n] for n in range(3))
                weights[:, _DIRECTION_INDEX[d]] += elements.matrices[:, si, a, b]
    weights.setflags(write=False)
    diagonal = _diagonal_array(elements, mesh, level)
    diagonal.setflags(write=False)
    logger.debug("Stencil computed", form=form.name, level=level, center=float(weights[0, 0]))
    return StencilTable(form, mesh, level, weights, elements, diagonal)


def _check_table(table: StencilTable, fn: FEFunction, level: int) -> None:
    if table.level != level or fn.mesh is not table.mesh:
        raise DescriptorMismatchError(
            "stencil table built for another level or mesh",
            {"table_level": table.level, "level": level},
        )


def _partial_rows(table: StencilTable, c: int, x: np.ndarray) -> np.ndarray:
    """In-macro part of the rows at macro-boundary vertices"""
    lattice = stencil_lattice(table.level)
    return _cell_product(table.elements, c, x, lattice.boundary_instances)


def apply_stencil(
    table: StencilTable,
    src: FEFunction,
    dst: FEFunction,
    level: int,
    mode: ApplyMode = ApplyMode.REPLACE,
    bc: BoundaryCondition = BoundaryCondition.NONE,
    threads: Optional[int] = None,
) -> None:
    """dst (<- or +=) A src, full rows inside each macro-cell, partial rows on its boundary"""
    _check_p1(src, dst)
    _check_table(table, src, level)
    lattice = stencil_lattice(level)
    x = src.data(level)
    out = np.zeros_like(x)

    def work(c: int) -> None:
        y = _partial_rows(table, c, x[c])
        y[lattice.interior] = x[c][lattice.neighbours] @ table.weights[c]
        out[c] = y

    _for_each_cell(work, src.mesh.n_cells, threads)
    _finish(src.interface(level), out, x, dst.data(level), mode, bc)
    if settings.METRICS_ENABLED:
        OPERATOR_APPLY_COUNT.labels(kernel=Kernel.STENCIL.value, form=table.form.name).inc()


def extract_diagonal(
    source: Union[FormId, StencilTable],
    level: int,
    mesh: Optional[CoarseMesh] = None,
    bc: BoundaryCondition = BoundaryCondition.NONE,
) -> FEFunction:
    """Diagonal of the assembled operator as a P1 function on ``level``"""
    if isinstance(source, StencilTable):
        mesh = source.mesh
        values = source.diagonal
    else:
        if mesh is None:
            raise MissingPrerequisiteError("extract_diagonal of a form needs the mesh")
        values = _diagonal_array(element_data(source, mesh, level), mesh, level)
    diag = FEFunction(p1(), mesh, (level, level), name="diag")
    data = diag.data(level)
    data[...] = values
    if BoundaryCondition(bc) == BoundaryCondition.DIRICHLET_IDENTITY:
        data[diag.interface(level).dirichlet] = 1.0
    return diag


def _gauss_seidel_interior(
    weights: np.ndarray, rows, b: np.ndarray, x: np.ndarray, reverse: bool
) -> None:
    center = float(weights[0])
    off = weights[1:].tolist()
    xs = x.tolist()
    bs = b.tolist()
    for v, nb in (reversed(rows) if reverse else rows):
        acc = bs[v]
        for w, n in zip(off, nb):
            acc -= w * xs[n]
        xs[v] = acc / center
    x[:] = xs


def _interface_jacobi(
    table: StencilTable, imap: InterfaceMap, b: np.ndarray, x: np.ndarray, omega: float
) -> None:
    free = imap.interface
    if not free.any():
        return
    ax = np.zeros_like(x)
    for c in range(imap.n_cells):
        ax[c] = _partial_rows(table, c, x[c])
    sum_replicas(imap, ax)
    x[free] += omega * (b[free] - ax[free]) / table.diagonal[free]


def gauss_seidel_sweep(
    table: StencilTable,
    rhs: FEFunction,
    x: FEFunction,
    level: int,
    direction: SweepDirection = SweepDirection.FORWARD,
    threads: Optional[int] = None,
    interface_omega: float = 1.0,
) -> None:
    """Hybrid sweep: lexicographic GS inside every macro-cell, Jacobi on interface DoFs.

    Forward runs the interior sweep first, backward runs the interface step first
    and the interior in reverse order, so forward followed by backward is
    symmetric. Dirichlet DoFs are never touched.
    """
    _check_p1(rhs, x)
    _check_table(table, x, level)
    if (table.weights[:, 0] == 0.0).any():
        raise SolverBreakdownError("zero center weight", {"level": level})
    lattice = stencil_lattice(level)
    imap = x.interface(level)
    xd, bd = x.data(level), rhs.data(level)
    backward = SweepDirection(direction) == SweepDirection.BACKWARD

    def work(c: int) -> None:
        _gauss_seidel_interior(table.weights[c], lattice.rows, bd[c], xd[c], backward)

    if backward:
        _interface_jacobi(table, imap, bd, xd, interface_omega)
    _for_each_cell(work, x.mesh.n_cells, threads)
    if not backward:
        _interface_jacobi(table, imap, bd, xd, interface_omega)
    if settings.METRICS_ENABLED:
        SMOOTHER_SWEEP_COUNT.labels(kind="gauss_seidel").inc()


class P1Operator:
    """Level-independent handle on one form: ``apply(src, dst, level)``

    Constant-coefficient forms build stencil tables on first use, so Gauss-Seidel
    is available whatever the apply kernel.
    """

    kernel: Kernel = Kernel.ELEMENTWISE

    def __init__(
        self,
        form: FormId,
        mesh: CoarseMesh,
        bc: BoundaryCondition = BoundaryCondition.DIRICHLET_IDENTITY,
        threads: Optional[int] = None,
    ):
        self.form = form
        self.mesh = mesh
        self.bc = BoundaryCondition(bc)
        self.threads = threads
        self._diagonals: Dict[int, FEFunction] = {}
        self._tables: Dict[int, StencilTable] = {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.form.name}, bc={self.bc.value})"

    def table(self, level: int) -> StencilTable:
        if level not in self._tables:
            self._tables[level] = compute_stencil(self.form, self.mesh, level)
        return self._tables[level]

    def apply(
        self, src: FEFunction, dst: FEFunction, level: int, mode: ApplyMode = ApplyMode.REPLACE
    ) -> None:
        apply_elementwise(self.form, src, dst, level, mode, self.bc, self.threads)

    def diagonal(self, level: int) -> FEFunction:
        if level not in self._diagonals:
            self._diagonals[level] = extract_diagonal(self.form, level, self.mesh, self.bc)
        return self._diagonals[level]

    @property
    def supports_gauss_seidel(self) -> bool:
        return self.form.is_constant

    def gauss_seidel(
        self,
        rhs: FEFunction,
        x: FEFunction,
        level: int,
        direction: SweepDirection = SweepDirection.FORWARD,
    ) -> None:
        if not self.supports_gauss_seidel:
            raise MissingPrerequisiteError(
                "Gauss-Seidel needs a constant-coefficient form", {"form": self.form.name}
            )
        gauss_seidel_sweep(self.table(level), rhs, x, level, direction, self.threads)


class StencilOperator(P1Operator):
    kernel = Kernel.STENCIL

    def __init__(self, form: FormId, mesh: CoarseMesh, bc=BoundaryCondition.DIRICHLET_IDENTITY, threads=None):
        if not form.is_constant:
            raise UnsupportedFormError(
                "stencil kernel needs a constant-coefficient form", {"form": form.name}
            )
        super().__init__(form, mesh, bc, threads)

    def apply(self, src, dst, level, mode=ApplyMode.REPLACE) -> None:
        apply_stencil(self.table(level), src, dst, level, mode, self.bc, self.threads)

    def diagonal(self, level: int) -> FEFunction:
        if level not in self._diagonals:
            self._diagonals[level] = extract_diagonal(self.table(level), level, bc=self.bc)
        return self._diagonals[level]


def make_operator(
    form: FormId,
    mesh: CoarseMesh,
    kernel: Kernel = Kernel.STENCIL,
    bc: BoundaryCondition = BoundaryCondition.DIRICHLET_IDENTITY,
    threads: Optional[int] = None,
) -> P1Operator:
    if Kernel(kernel) == Kernel.STENCIL:
        return StencilOperator(form, mesh, bc, threads)
    return P1Operator(form, mesh, bc, threads)
