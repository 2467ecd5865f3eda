from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Tuple

import numpy as np

from tetmg.models.subgroups import PrimitiveKind

Cell = Tuple[int, int, int, int]
Face = Tuple[int, int, int]
Edge = Tuple[int, int]


class PrimitiveId(NamedTuple):
    kind: PrimitiveKind
    index: int

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"


@dataclass(frozen=True, eq=False)
class CoarseMesh:
    """Validated unstructured coarse mesh.

    Cells keep their stored local vertex order; edges and faces are derived
    from the cells as sorted vertex-id tuples in lexicographic order.
    """

    vertex_coords: np.ndarray
    cells: Tuple[Cell, ...]
    edges: Tuple[Edge, ...]
    faces: Tuple[Face, ...]
    face_cells: Tuple[Tuple[int, ...], ...]
    # True where the face is a Dirichlet boundary face
    boundary_flags: Tuple[bool, ...]
    _face_index: Dict[Face, int] = field(repr=False, default_factory=dict)
    _edge_index: Dict[Edge, int] = field(repr=False, default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_coords)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def face_id(self, face) -> int:
        return self._face_index[tuple(sorted(face))]

    def edge_id(self, edge) -> int:
        return self._edge_index[tuple(sorted(edge))]

    def is_boundary_face(self, face_id: int) -> bool:
        return len(self.face_cells[face_id]) == 1

    @property
    def boundary_faces(self) -> List[int]:
        return [f for f in range(len(self.faces)) if self.is_boundary_face(f)]

    @property
    def dirichlet_faces(self) -> List[int]:
        return [f for f in self.boundary_faces if self.boundary_flags[f]]

    def cell_vertices(self, cell: int) -> np.ndarray:
        """Physical corner coordinates in stored local order, shape (4, 3)"""
        return self.vertex_coords[list(self.cells[cell])]

    def cell_faces(self, cell: int) -> List[int]:
        c = self.cells[cell]
        return [self.face_id(f) for f in _local_faces(c)]

    def cell_edges(self, cell: int) -> List[int]:
        c = self.cells[cell]
        return [self.edge_id((c[a], c[b])) for a, b in _LOCAL_EDGES]

    def cell_volume(self, cell: int) -> float:
        v = self.cell_vertices(cell)
        return abs(float(np.linalg.det((v[1:] - v[0]).T))) / 6.0

    def mesh_volume(self) -> float:
        return sum(self.cell_volume(c) for c in range(self.n_cells))

    def same_as(self, other: "CoarseMesh") -> bool:
        return (
            np.array_equal(self.vertex_coords, other.vertex_coords)
            and self.cells == other.cells
            and self.edges == other.edges
            and self.faces == other.faces
            and self.face_cells == other.face_cells
            and self.boundary_flags == other.boundary_flags
        )


_LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_LOCAL_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


def _local_faces(cell: Cell) -> List[Face]:
    return [tuple(sorted(cell[i] for i in f)) for f in _LOCAL_FACES]


@dataclass(frozen=True)
class MacroCellMap:
    """Affine map x = J @ xi + offset from the reference tetrahedron"""

    jacobian: np.ndarray
    offset: np.ndarray
    determinant: float

    def to_physical(self, ref: np.ndarray) -> np.ndarray:
        return np.asarray(ref, dtype=float) @ self.jacobian.T + self.offset

    def to_reference(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.jacobian, (np.asarray(x, dtype=float) - self.offset).T).T


@dataclass(frozen=True)
class PrimitiveGraph:
    """Undirected graph over all macro-primitives"""

    nodes: Tuple[PrimitiveId, ...]
    links: FrozenSet[FrozenSet[PrimitiveId]]
    adjacency: Dict[PrimitiveId, Tuple[PrimitiveId, ...]]

    def neighbors(self, node: PrimitiveId, kind: PrimitiveKind = None) -> Tuple[PrimitiveId, ...]:
        found = self.adjacency.get(node, ())
        if kind is None:
            return found
        return tuple(n for n in found if n.kind == kind)

    def has_link(self, a: PrimitiveId, b: PrimitiveId) -> bool:
        return frozenset((a, b)) in self.links

    def count(self, kind: PrimitiveKind) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)

    def link_count(self, kind_a: PrimitiveKind = None, kind_b: PrimitiveKind = None) -> int:
        if kind_a is None:
            return len(self.links)
        wanted = sorted((kind_a.value, (kind_b or kind_a).value))
        return sum(
            1
            for link in self.links
            if sorted(n.kind.value for n in _pair(link)) == wanted
        )


def _pair(link: FrozenSet[PrimitiveId]) -> Tuple[PrimitiveId, PrimitiveId]:
    a, b = tuple(link)
    return a, b
