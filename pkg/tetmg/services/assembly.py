"""Grid-aware assembled reference operator.

Uses the same local matrices as the matrix-free kernels and a dense
numbering of the owned DoFs, so agreement with it validates indexing,
scatter, synchronisation and enumeration.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
import structlog

from tetmg.core.exceptions import DescriptorMismatchError, ExportError
from tetmg.models.mesh import CoarseMesh
from tetmg.models.space import SpaceDescriptor, p1
from tetmg.models.subgroups import CELL_SUBGROUPS, Lattice, SubgroupId
from tetmg.services.fe_function import FEFunction, build_interface_map
from tetmg.services.indexing import linearize, vertex_offsets_of, vertex_width
from tetmg.services.operators import BoundaryCondition, FormId, element_data

logger = structlog.get_logger()


@dataclass(frozen=True, eq=False)
class GlobalEnumeration:
    """Dense ids 0..n-1 for owned DoFs; replicas carry their owner's id"""

    level: int
    ids: np.ndarray
    owned: np.ndarray
    dirichlet: np.ndarray
    n: int

    def global_id(self, cell: int, subgroup: SubgroupId, index: Lattice) -> int:
        if subgroup != SubgroupId.V:
            raise DescriptorMismatchError("P1 enumeration holds vertex DoFs only")
        return int(self.ids[cell, linearize(vertex_width(self.level), index)])

    def gather(self, fn: FEFunction) -> np.ndarray:
        """Owned values as one global vector"""
        data = fn.data(self.level)
        vec = np.zeros(self.n)
        vec[self.ids[self.owned]] = data[self.owned]
        return vec

    def scatter(self, vec: np.ndarray, fn: FEFunction) -> None:
        """Write a global vector into every replica"""
        if len(vec) != self.n:
            raise DescriptorMismatchError(
                "vector length does not match the enumeration", {"n": self.n, "len": len(vec)}
            )
        fn.data(self.level)[...] = np.asarray(vec)[self.ids]

    @property
    def dirichlet_ids(self) -> np.ndarray:
        return np.unique(self.ids[self.dirichlet])


def enumerate_global(descriptor: SpaceDescriptor, mesh: CoarseMesh, level: int) -> GlobalEnumeration:
    if not descriptor.is_p1:
        raise DescriptorMismatchError(
            "global enumeration is defined for P1", {"space": descriptor.name}
        )
    imap = build_interface_map(mesh, descriptor, level)
    return GlobalEnumeration(
        level=level,
        ids=imap.global_ids,
        owned=imap.owned,
        dirichlet=imap.dirichlet,
        n=imap.n_owned,
    )


def assemble(
    form: FormId,
    mesh: CoarseMesh,
    level: int,
    bc: BoundaryCondition = BoundaryCondition.NONE,
    cell_order: Optional[Sequence[int]] = None,
) -> sp.csr_matrix:
    """Triplet accumulation over all micro-cells, then CSR compression"""
    enum = enumerate_global(p1(), mesh, level)
    elements = element_data(form, mesh, level)
    rows, cols, vals = [], [], []
    for c in (range(mesh.n_cells) if cell_order is None else cell_order):
        for si, s in enumerate(CELL_SUBGROUPS):
            ids = enum.ids[c][vertex_offsets_of(s, level)]
            local = np.broadcast_to(elements.matrices[c, si], (len(ids), 4, 4))
            if elements.factors is not None:
                local = local * elements.factors[c][si][:, None, None]
            rows.append(np.repeat(ids, 4, axis=1).ravel())
            cols.append(np.tile(ids, (1, 4)).ravel())
            vals.append(local.ravel())
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    if BoundaryCondition(bc) == BoundaryCondition.DIRICHLET_IDENTITY:
        fixed = enum.dirichlet_ids
        keep = ~np.isin(rows, fixed)
        rows = np.concatenate([rows[keep], fixed])
        cols = np.concatenate([cols[keep], fixed])
        vals = np.concatenate([vals[keep], np.ones(len(fixed))])

    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(enum.n, enum.n)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    logger.debug("Matrix assembled", form=form.name, level=level, n=enum.n, nnz=matrix.nnz)
    return matrix


def spmv(matrix: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if matrix.shape[1] != len(x):
        raise DescriptorMismatchError(
            "dimension mismatch", {"shape": matrix.shape, "len": len(x)}
        )
    return matrix @ x


def dump_matrix_market(matrix: sp.spmatrix, path: Union[str, Path], comment: str = "") -> Path:
    path = Path(path)
    try:
        with path.open("wb") as fh:
            scipy.io.mmwrite(fh, matrix, comment=comment)
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}", {"path": str(path)}) from e
    logger.info("Matrix written", path=str(path), n=matrix.shape[0], nnz=matrix.nnz)
    return path
