"""Coefficient storage on macro-cells and the algebra over it.

Values live only on macro-cells. A DoF on a macro-face, -edge or -vertex
shared by several cells is replicated in each of them; ``InterfaceMap``
groups the replicas of one physical DoF. Replica groups are found
symbolically: a micro-vertex is identified by its integer barycentric
weights on the global ids of the macro-vertices, so no coordinates are
compared.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from tetmg.core.config import settings
from tetmg.core.exceptions import (
    DescriptorMismatchError,
    LevelError,
    PointLocationError,
    UnsupportedFormError,
)
from tetmg.models.mesh import CoarseMesh
from tetmg.models.space import Layout, SpaceDescriptor
from tetmg.models.subgroups import CELL_SUBGROUPS, SUBGROUP_TABLE, SubgroupId
from tetmg.services.indexing import (
    index_set,
    linearize_array,
    n_tet,
    require_taxonomy_level,
    vertex_offsets_of,
    vertex_width,
    width,
)
from tetmg.services.mesh_service import macro_cell_map

logger = structlog.get_logger()

BARYCENTRIC_TOL = 1e-12

PointFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SlotBlock:
    subgroup: SubgroupId
    m: int
    width: int
    count: int
    start: int

    @property
    def size(self) -> int:
        return self.m * self.count


@dataclass(frozen=True)
class SlotLayout:
    """Placement of every subgroup array inside one macro-cell row"""

    blocks: Tuple[SlotBlock, ...]
    size: int
    layout: Layout

    def block(self, subgroup: SubgroupId) -> SlotBlock:
        for b in self.blocks:
            if b.subgroup == subgroup:
                return b
        raise DescriptorMismatchError(f"subgroup {subgroup.label} not in space")

    def slot(self, block: SlotBlock, instance: np.ndarray, d: int) -> np.ndarray:
        if self.layout == Layout.AOS:
            return block.start + block.m * instance + d
        return block.start + d * block.count + instance


@lru_cache(maxsize=128)
def slot_layout(descriptor: SpaceDescriptor, level: int) -> SlotLayout:
    require_taxonomy_level(level)
    blocks, start = [], 0
    for s, m in descriptor.slots:
        w = width(s, level)
        block = SlotBlock(s, m, w, n_tet(w), start)
        blocks.append(block)
        start += block.size
    return SlotLayout(tuple(blocks), start, descriptor.layout)


@dataclass(frozen=True)
class InterfaceMap:
    """Replica groups, ownership and boundary masks of one space on one level.

    Flat slot index = cell * size + slot. ``replica_slots`` is sorted by group
    and, inside a group, by cell id; ``owner_slots[g]`` is the replica on the
    cell with the smallest id.
    """

    level: int
    n_cells: int
    size: int
    replica_slots: np.ndarray
    replica_groups: np.ndarray
    owner_slots: np.ndarray
    owned: np.ndarray
    dirichlet: np.ndarray
    macro_boundary: np.ndarray
    global_ids: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.owner_slots)

    @property
    def n_owned(self) -> int:
        return int(self.owned.sum())

    @property
    def interface(self) -> np.ndarray:
        """Macro-boundary slots that are free (not Dirichlet)"""
        return self.macro_boundary & ~self.dirichlet

    def shared_slots(self, cell_a: int, cell_b: int) -> Tuple[np.ndarray, np.ndarray]:
        """Aligned local slots of the DoFs shared by two cells"""
        pairs_a, pairs_b = [], []
        for g in range(self.n_groups):
            members = self.replica_slots[self.replica_groups == g]
            owners = members // self.size
            if cell_a in owners and cell_b in owners:
                pairs_a.append(members[owners == cell_a][0] % self.size)
                pairs_b.append(members[owners == cell_b][0] % self.size)
        return np.array(pairs_a, dtype=np.int64), np.array(pairs_b, dtype=np.int64)


def _dirichlet_supports(mesh: CoarseMesh) -> set:
    supports = set()
    for f in mesh.dirichlet_faces:
        a, b, c = mesh.faces[f]
        for sub in ((a,), (b,), (c,), (a, b), (a, c), (b, c), (a, b, c)):
            supports.add(frozenset(sub))
    return supports


@lru_cache(maxsize=64)
def build_interface_map(mesh: CoarseMesh, descriptor: SpaceDescriptor, level: int) -> InterfaceMap:
    layout = slot_layout(descriptor, level)
    size, n_cells = layout.size, mesh.n_cells
    N = 2**level
    dirichlet_supports = _dirichlet_supports(mesh)
    dirichlet = np.zeros((n_cells, size), dtype=bool)
    macro_boundary = np.zeros((n_cells, size), dtype=bool)
    groups: Dict[tuple, List[int]] = {}

    for c, cell in enumerate(mesh.cells):
        corners = np.asarray(cell, dtype=np.int64)
        for block in layout.blocks:
            idx = index_set(block.width)
            offsets = np.asarray(SUBGROUP_TABLE[block.subgroup].offsets, dtype=np.int64)
            lattice = idx[:, None, :] + offsets[None, :, :]
            bary = np.concatenate([N - lattice.sum(axis=-1, keepdims=True), lattice], axis=-1)
            support = (bary > 0).any(axis=1)
            on_boundary = ~support.all(axis=1)
            for t in np.nonzero(on_boundary)[0]:
                key = tuple(
                    sorted(
                        tuple(sorted((int(corners[a]), int(wt)) for a, wt in enumerate(vb) if wt > 0))
                        for vb in bary[t]
                    )
                )
                is_dirichlet = frozenset(corners[support[t]].tolist()) in dirichlet_supports
                for d in range(block.m):
                    slot = int(layout.slot(block, t, d))
                    macro_boundary[c, slot] = True
                    dirichlet[c, slot] = is_dirichlet
                    groups.setdefault((key, d), []).append(c * size + slot)

    replicated = sorted((sorted(members) for members in groups.values() if len(members) > 1))
    owned = np.ones((n_cells, size), dtype=bool)
    flat_owned = owned.reshape(-1)
    replica_slots, replica_groups, owner_slots = [], [], []
    for g, members in enumerate(replicated):
        owner_slots.append(members[0])
        flat_owned[members[1:]] = False
        replica_slots.extend(members)
        replica_groups.extend([g] * len(members))

    ids = np.full(n_cells * size, -1, dtype=np.int64)
    ids[flat_owned] = np.arange(int(flat_owned.sum()), dtype=np.int64)
    for members in replicated:
        ids[members[1:]] = ids[members[0]]

    imap = InterfaceMap(
        level=level,
        n_cells=n_cells,
        size=size,
        replica_slots=np.asarray(replica_slots, dtype=np.int64),
        replica_groups=np.asarray(replica_groups, dtype=np.int64),
        owner_slots=np.asarray(owner_slots, dtype=np.int64),
        owned=owned,
        dirichlet=dirichlet,
        macro_boundary=macro_boundary,
        global_ids=ids.reshape(n_cells, size),
    )
    logger.debug(
        "Interface map built",
        level=level,
        space=descriptor.name,
        groups=imap.n_groups,
        owned=imap.n_owned,
    )
    return imap


@lru_cache(maxsize=64)
def reference_vertices(level: int) -> np.ndarray:
    """Reference coordinates of all micro-vertices in linearized order"""
    return index_set(vertex_width(level)) * (2.0**-level)


@lru_cache(maxsize=64)
def physical_vertices(mesh: CoarseMesh, level: int) -> np.ndarray:
    """Mapped micro-vertex coordinates, shape (n_cells, n_tet(2**l + 1), 3)"""
    ref = reference_vertices(level)
    out = np.stack([macro_cell_map(mesh, c).to_physical(ref) for c in range(mesh.n_cells)])
    out.setflags(write=False)
    return out


class FEFunction:
    """Per-macro-cell, per-subgroup coefficient arrays over a level range"""

    def __init__(
        self,
        descriptor: SpaceDescriptor,
        mesh: CoarseMesh,
        levels: Tuple[int, int],
        name: str = "u",
    ):
        lo, hi = levels
        if lo > hi or lo < settings.MIN_LEVEL or hi > settings.MAX_LEVEL:
            raise LevelError(
                f"levels {levels} outside [{settings.MIN_LEVEL}, {settings.MAX_LEVEL}]",
                {"levels": levels},
            )
        self.descriptor = descriptor
        self.mesh = mesh
        self.min_level, self.max_level = lo, hi
        self.name = name
        self._data: Dict[int, np.ndarray] = {
            level: np.zeros((mesh.n_cells, slot_layout(descriptor, level).size))
            for level in range(lo, hi + 1)
        }

    def __repr__(self) -> str:
        return (
            f"FEFunction({self.name!r}, {self.descriptor.name}, "
            f"levels=[{self.min_level}, {self.max_level}], cells={self.mesh.n_cells})"
        )

    def check_level(self, level: int) -> None:
        if level not in self._data:
            raise LevelError(
                f"level {level} not allocated for {self.name!r}",
                {"level": level, "allocated": (self.min_level, self.max_level)},
            )

    def data(self, level: int) -> np.ndarray:
        """All values of a level, shape (n_cells, dof_count)"""
        self.check_level(level)
        return self._data[level]

    def layout(self, level: int) -> SlotLayout:
        return slot_layout(self.descriptor, level)

    def interface(self, level: int) -> InterfaceMap:
        self.check_level(level)
        return build_interface_map(self.mesh, self.descriptor, level)

    def view(self, level: int, subgroup: SubgroupId) -> np.ndarray:
        """Contiguous per-cell array of one subgroup, shape (n_cells, m * n_tet(w))"""
        block = self.layout(level).block(subgroup)
        return self.data(level)[:, block.start: block.start + block.size]

    def component_view(self, level: int, subgroup: SubgroupId) -> np.ndarray:
        """Layout-independent view, shape (n_cells, m, n_tet(w))"""
        block = self.layout(level).block(subgroup)
        raw = self.view(level, subgroup)
        if self.descriptor.layout == Layout.AOS:
            return raw.reshape(-1, block.count, block.m).transpose(0, 2, 1)
        return raw.reshape(-1, block.m, block.count)

    def vertex_values(self, level: int) -> np.ndarray:
        """P1 vertex values, shape (n_cells, n_tet(2**l + 1))"""
        if not self.descriptor.is_p1:
            raise UnsupportedFormError("vertex_values needs a P1 space", {"space": self.descriptor.name})
        return self.data(level)

    def similar(self, name: Optional[str] = None) -> "FEFunction":
        return FEFunction(self.descriptor, self.mesh, (self.min_level, self.max_level), name or self.name)


def allocate(
    descriptor: SpaceDescriptor,
    mesh: CoarseMesh,
    levels: Tuple[int, int],
    name: str = "u",
) -> FEFunction:
    """Zero-initialised function on every macro-cell and level"""
    fn = FEFunction(descriptor, mesh, levels, name)
    for level in range(levels[0], levels[1] + 1):
        fn.interface(level)
    logger.debug("Allocated function", name=name, space=descriptor.name, levels=levels)
    return fn


def _check_pair(x: FEFunction, y: FEFunction) -> None:
    if x.descriptor != y.descriptor or x.mesh is not y.mesh:
        raise DescriptorMismatchError(
            "functions live on different spaces or meshes",
            {"x": x.descriptor.name, "y": y.descriptor.name},
        )


def interpolate(fn: FEFunction, level: int, f: PointFunction) -> None:
    """Nodal interpolation: vertex DoFs at micro-vertices, edge DoFs at midpoints.

    ``f`` maps an (n, 3) array of physical points to (n,) or (n, m) values.
    Replicas take the owner's value.
    """
    data = fn.data(level)
    points = physical_vertices(fn.mesh, level)
    layout = fn.layout(level)
    for block in layout.blocks:
        lin = vertex_offsets_of(block.subgroup, level)
        for c in range(fn.mesh.n_cells):
            where = points[c][lin].mean(axis=1)
            values = np.asarray(f(where), dtype=float).reshape(len(where), -1)
            if values.shape[1] == 1:
                values = np.repeat(values, block.m, axis=1)
            elif values.shape[1] != block.m:
                raise DescriptorMismatchError(
                    f"function returned {values.shape[1]} components, space has {block.m}"
                )
            instances = np.arange(block.count)
            for d in range(block.m):
                data[c, layout.slot(block, instances, d)] = values[:, d]
    sync_broadcast(fn, level)


def assign(y: FEFunction, x: FEFunction, level: int) -> None:
    _check_pair(x, y)
    y.data(level)[...] = x.data(level)


copy = assign


def fill(y: FEFunction, level: int, value: float) -> None:
    y.data(level)[...] = value


def scale(y: FEFunction, a: float, level: int) -> None:
    y.data(level)[...] *= a


def axpy(y: FEFunction, a: float, x: FEFunction, level: int) -> None:
    """y <- y + a * x over all arrays including replicas"""
    _check_pair(x, y)
    y.data(level)[...] += a * x.data(level)


def dot(x: FEFunction, y: FEFunction, level: int) -> float:
    """Sum of x * y over owned DoFs, each physical DoF counted once.

    ``math.fsum`` rounds the exact sum once, so the result does not depend on
    the storage layout or on the order of macro-cells.
    """
    _check_pair(x, y)
    owned = x.interface(level).owned
    return math.fsum(x.data(level)[owned] * y.data(level)[owned])


def norm(x: FEFunction, level: int) -> float:
    return math.sqrt(max(dot(x, x, level), 0.0))


def sync_additive(fn: FEFunction, level: int) -> None:
    """Replace every replica by the sum of all replicas of its DoF"""
    sum_replicas(fn.interface(level), fn.data(level))


def sum_replicas(imap: InterfaceMap, data: np.ndarray) -> None:
    """``sync_additive`` on a raw (n_cells, size) array"""
    if not imap.n_groups:
        return
    flat = data.reshape(-1)
    sums = np.bincount(
        imap.replica_groups, weights=flat[imap.replica_slots], minlength=imap.n_groups
    )
    flat[imap.replica_slots] = sums[imap.replica_groups]


def sync_broadcast(fn: FEFunction, level: int) -> None:
    """Set every replica to the owner's value"""
    imap = fn.interface(level)
    if not imap.n_groups:
        return
    flat = fn.data(level).reshape(-1)
    flat[imap.replica_slots] = flat[imap.owner_slots][imap.replica_groups]


def _locate(fn: FEFunction, level: int, point: np.ndarray):
    """(cell, vertex offsets, barycentric weights) of the micro-cell holding point"""
    N = 2**level
    for c in range(fn.mesh.n_cells):
        ref = macro_cell_map(fn.mesh, c).to_reference(point)
        if ref.min() < -BARYCENTRIC_TOL or ref.sum() > 1 + BARYCENTRIC_TOL:
            continue
        r = np.clip(ref * N, 0.0, float(N))
        base = np.floor(r).astype(np.int64)
        for subgroup in CELL_SUBGROUPS:
            w = width(subgroup, level)
            offsets = np.asarray(SUBGROUP_TABLE[subgroup].offsets, dtype=np.int64)
            for delta in np.ndindex(2, 2, 2):
                p = base - np.asarray(delta)
                if p.min() < 0 or p.sum() >= w:
                    continue
                corners = p + offsets
                local = np.linalg.solve((corners[1:] - corners[0]).T.astype(float), r - corners[0])
                lam = np.concatenate([[1.0 - local.sum()], local])
                if lam.min() >= -BARYCENTRIC_TOL * N:
                    lin = linearize_array(vertex_width(level), corners)
                    return c, lin, lam
    raise PointLocationError(f"point {tuple(point)} outside the domain", {"point": tuple(point)})


def evaluate_at(fn: FEFunction, level: int, point) -> np.ndarray:
    """Barycentric-linear evaluation inside the containing micro-cell (P1 spaces)"""
    if fn.descriptor.slots[0][0] != SubgroupId.V or len(fn.descriptor.slots) != 1:
        raise UnsupportedFormError(
            "evaluate_at supports vertex-only spaces", {"space": fn.descriptor.name}
        )
    c, lin, lam = _locate(fn, level, np.asarray(point, dtype=float))
    values = fn.component_view(level, SubgroupId.V)[c][:, lin]
    result = values @ lam
    return float(result[0]) if len(result) == 1 else result
