"""Coarse mesh ingestion: parsing, validation, primitive graph, cell maps.

Mesh text format (UTF-8, ``#`` starts a comment)::

    vertices N
    x y z                # N lines
    cells M
    i0 i1 i2 i3          # M lines, local vertex order defines the reference map
    boundary K           # optional
    f0 f1 f2 flag        # K lines, flag 1 = Dirichlet, 0 = natural
"""
from itertools import permutations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from tetmg.core.exceptions import (
    DegenerateCellError,
    MeshParseError,
    NonConformingMeshError,
    TetGridError,
)
from tetmg.models.mesh import (
    Cell,
    CoarseMesh,
    MacroCellMap,
    PrimitiveGraph,
    PrimitiveId,
    _local_faces,
    _LOCAL_EDGES,
)
from tetmg.models.subgroups import PrimitiveKind

logger = structlog.get_logger()

DEGENERACY_TOL = 1e-12
HANGING_NODE_TOL = 1e-10

IDENTITY_PERMUTATION = (0, 1, 2, 3)
# Local vertex orders whose v0-v2 / v1-v3 midpoints realise the three inner edges
INNER_EDGE_CANDIDATES = ((0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 1, 3))


def _tokens(text: str) -> Iterable[Tuple[int, List[str]]]:
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield number, line.split()


def _header(tokens: List[str], line: int, keyword: str) -> int:
    if len(tokens) != 2 or tokens[0] != keyword:
        raise MeshParseError(f"expected '{keyword} <count>'", line)
    try:
        count = int(tokens[1])
    except ValueError:
        raise MeshParseError(f"invalid {keyword} count {tokens[1]!r}", line)
    if count < 0:
        raise MeshParseError(f"negative {keyword} count", line)
    return count


def _row(tokens: List[str], line: int, n: int, cast, what: str):
    if len(tokens) != n:
        raise MeshParseError(f"{what} line needs {n} values, got {len(tokens)}", line)
    try:
        return [cast(t) for t in tokens]
    except ValueError:
        raise MeshParseError(f"malformed {what} line", line)


def parse_mesh(text: str, optimize_inner_edge: bool = False) -> CoarseMesh:
    """Parse and validate mesh text into a CoarseMesh"""
    lines = list(_tokens(text))
    pos = 0

    def take(what: str):
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshParseError(f"unexpected end of file, expected {what}", last + 1)
        item = lines[pos]
        pos += 1
        return item

    line, tokens = take("'vertices' header")
    n_vertices = _header(tokens, line, "vertices")
    coords = []
    for _ in range(n_vertices):
        line, tokens = take("vertex line")
        coords.append(_row(tokens, line, 3, float, "vertex"))

    line, tokens = take("'cells' header")
    n_cells = _header(tokens, line, "cells")
    cells, cell_lines = [], []
    for _ in range(n_cells):
        line, tokens = take("cell line")
        cell = _row(tokens, line, 4, int, "cell")
        for v in cell:
            if not 0 <= v < n_vertices:
                raise MeshParseError(f"vertex id {v} out of range", line)
        if len(set(cell)) != 4:
            raise MeshParseError("cell repeats a vertex", line)
        cells.append(tuple(cell))
        cell_lines.append(line)

    overrides: Dict[Tuple[int, int, int], Tuple[bool, int]] = {}
    if pos < len(lines):
        line, tokens = take("'boundary' header")
        n_boundary = _header(tokens, line, "boundary")
        for _ in range(n_boundary):
            line, tokens = take("boundary line")
            f0, f1, f2, flag = _row(tokens, line, 4, int, "boundary")
            if flag not in (0, 1):
                raise MeshParseError(f"boundary flag must be 0 or 1, got {flag}", line)
            overrides[tuple(sorted((f0, f1, f2)))] = (bool(flag), line)
    if pos < len(lines):
        raise MeshParseError("trailing content after mesh sections", lines[pos][0])

    mesh = build_mesh(np.array(coords, dtype=float).reshape(-1, 3), cells, overrides, cell_lines)
    if optimize_inner_edge:
        mesh = apply_inner_edge_permutations(mesh)
    return mesh


def _six_volume(coords: np.ndarray, cell: Sequence[int]) -> float:
    v = coords[list(cell)]
    return float(np.linalg.det((v[1:] - v[0]).T))


def build_mesh(
    coords: np.ndarray,
    cells: Sequence[Cell],
    boundary_overrides: Optional[Dict[Tuple[int, int, int], Tuple[bool, int]]] = None,
    cell_lines: Optional[Sequence[int]] = None,
) -> CoarseMesh:
    """Derive edges/faces, repair orientation and validate conformity"""
    coords = np.asarray(coords, dtype=float)
    scale = float(np.ptp(coords, axis=0).max()) if len(coords) else 1.0
    oriented = []
    for c, cell in enumerate(cells):
        det = _six_volume(coords, cell)
        if abs(det) <= DEGENERACY_TOL * max(scale, 1e-300) ** 3:
            raise DegenerateCellError(
                f"cell {c} has zero volume",
                {"cell": c, "line": cell_lines[c] if cell_lines else None},
            )
        if det < 0:
            logger.warning("Repaired negative cell orientation", cell=c, swapped=(2, 3))
            cell = (cell[0], cell[1], cell[3], cell[2])
        oriented.append(tuple(int(v) for v in cell))

    if len(set(tuple(sorted(c)) for c in oriented)) != len(oriented):
        raise NonConformingMeshError("duplicate cell")

    incidence: Dict[Tuple[int, int, int], List[int]] = {}
    edge_set = set()
    for c, cell in enumerate(oriented):
        for f in _local_faces(cell):
            incidence.setdefault(f, []).append(c)
        for a, b in _LOCAL_EDGES:
            edge_set.add(tuple(sorted((cell[a], cell[b]))))
    faces = tuple(sorted(incidence))
    for f in faces:
        if len(incidence[f]) > 2:
            raise NonConformingMeshError(
                f"face {f} shared by {len(incidence[f])} cells",
                {"face": f, "cells": incidence[f]},
            )
    edges = tuple(sorted(edge_set))
    _check_hanging_nodes(coords, edges, faces, scale)

    boundary_overrides = boundary_overrides or {}
    for f, (_, line) in boundary_overrides.items():
        if f not in incidence or len(incidence[f]) != 1:
            raise MeshParseError(f"boundary entry {f} is not a boundary face", line)
    flags = tuple(
        len(incidence[f]) == 1 and boundary_overrides.get(f, (True, 0))[0] for f in faces
    )

    mesh = CoarseMesh(
        vertex_coords=coords,
        cells=tuple(oriented),
        edges=edges,
        faces=faces,
        face_cells=tuple(tuple(incidence[f]) for f in faces),
        boundary_flags=flags,
        _face_index={f: i for i, f in enumerate(faces)},
        _edge_index={e: i for i, e in enumerate(edges)},
    )
    logger.info(
        "Coarse mesh built",
        vertices=mesh.n_vertices,
        edges=len(edges),
        faces=len(faces),
        cells=mesh.n_cells,
        boundary_faces=len(mesh.boundary_faces),
    )
    return mesh


def _check_hanging_nodes(coords: np.ndarray, edges, faces, scale: float) -> None:
    """Reject vertices lying strictly inside an edge or face they do not belong to"""
    if not len(coords):
        return
    tol = HANGING_NODE_TOL * max(scale, 1e-300)
    ids = np.arange(len(coords))
    for a, b in edges:
        d = coords[b] - coords[a]
        rel = coords - coords[a]
        t = rel @ d / (d @ d)
        dist = np.linalg.norm(rel - np.outer(t, d), axis=1)
        inside = (dist <= tol) & (t > 1e-12) & (t < 1 - 1e-12) & (ids != a) & (ids != b)
        if inside.any():
            v = int(ids[inside][0])
            raise NonConformingMeshError(
                f"hanging node: vertex {v} inside edge {(a, b)}", {"vertex": v, "edge": (a, b)}
            )
    for f in faces:
        p0, p1, p2 = coords[list(f)]
        e1, e2 = p1 - p0, p2 - p0
        normal = np.cross(e1, e2)
        area2 = np.linalg.norm(normal)
        rel = coords - p0
        in_plane = np.abs(rel @ normal) / area2 <= tol
        gram = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        lam = np.linalg.solve(gram, np.vstack([rel @ e1, rel @ e2]))
        l0 = 1 - lam[0] - lam[1]
        strictly = (lam[0] > 1e-12) & (lam[1] > 1e-12) & (l0 > 1e-12)
        inside = in_plane & strictly & ~np.isin(ids, f)
        if inside.any():
            v = int(ids[inside][0])
            raise NonConformingMeshError(
                f"hanging node: vertex {v} inside face {f}", {"vertex": v, "face": f}
            )


def serialize_mesh(mesh: CoarseMesh) -> str:
    """Canonical text form; parse_mesh(serialize_mesh(m)) reproduces m"""
    out = ["# tetmg coarse mesh", f"vertices {mesh.n_vertices}"]
    out += [" ".join(repr(float(c)) for c in xyz) for xyz in mesh.vertex_coords]
    out.append(f"cells {mesh.n_cells}")
    out += [" ".join(str(v) for v in cell) for cell in mesh.cells]
    natural = [f for f in mesh.boundary_faces if not mesh.boundary_flags[f]]
    if natural:
        out.append(f"boundary {len(natural)}")
        out += [" ".join(str(v) for v in mesh.faces[f]) + " 0" for f in natural]
    return "\n".join(out) + "\n"


def build_primitive_graph(mesh: CoarseMesh) -> PrimitiveGraph:
    """Macro-primitive graph with the full closure and cell-cell face links"""
    V, E, F, C = (PrimitiveKind.VERTEX, PrimitiveKind.EDGE, PrimitiveKind.FACE, PrimitiveKind.CELL)
    nodes = (
        [PrimitiveId(V, i) for i in range(mesh.n_vertices)]
        + [PrimitiveId(E, i) for i in range(len(mesh.edges))]
        + [PrimitiveId(F, i) for i in range(len(mesh.faces))]
        + [PrimitiveId(C, i) for i in range(mesh.n_cells)]
    )
    links = set()

    def link(a: PrimitiveId, b: PrimitiveId):
        links.add(frozenset((a, b)))

    for e, (a, b) in enumerate(mesh.edges):
        link(PrimitiveId(E, e), PrimitiveId(V, a))
        link(PrimitiveId(E, e), PrimitiveId(V, b))
    for f, face in enumerate(mesh.faces):
        for v in face:
            link(PrimitiveId(F, f), PrimitiveId(V, v))
        for a, b in ((0, 1), (0, 2), (1, 2)):
            link(PrimitiveId(F, f), PrimitiveId(E, mesh.edge_id((face[a], face[b]))))
        if len(mesh.face_cells[f]) == 2:
            c0, c1 = mesh.face_cells[f]
            link(PrimitiveId(C, c0), PrimitiveId(C, c1))
    for c, cell in enumerate(mesh.cells):
        node = PrimitiveId(C, c)
        for v in cell:
            link(node, PrimitiveId(V, v))
        for e in mesh.cell_edges(c):
            link(node, PrimitiveId(E, e))
        for f in mesh.cell_faces(c):
            link(node, PrimitiveId(F, f))

    adjacency: Dict[PrimitiveId, List[PrimitiveId]] = {n: [] for n in nodes}
    for pair in links:
        a, b = tuple(pair)
        adjacency[a].append(b)
        adjacency[b].append(a)
    order = {n: i for i, n in enumerate(nodes)}
    return PrimitiveGraph(
        nodes=tuple(nodes),
        links=frozenset(links),
        adjacency={n: tuple(sorted(adj, key=order.__getitem__)) for n, adj in adjacency.items()},
    )


def _check_cell(mesh: CoarseMesh, cell: int) -> None:
    if not 0 <= cell < mesh.n_cells:
        raise TetGridError(f"cell {cell} does not exist", {"cell": cell})


def macro_cell_map(mesh: CoarseMesh, cell) -> MacroCellMap:
    """Affine map with columns v1-v0, v2-v0, v3-v0 and offset v0"""
    index = cell.index if isinstance(cell, PrimitiveId) else int(cell)
    _check_cell(mesh, index)
    v = mesh.cell_vertices(index)
    jacobian = (v[1:] - v[0]).T.copy()
    det = float(np.linalg.det(jacobian))
    if det == 0.0:
        raise DegenerateCellError(f"cell {index} has zero volume", {"cell": index})
    return MacroCellMap(jacobian=jacobian, offset=v[0].copy(), determinant=det)


def select_inner_edge_permutation(mesh: CoarseMesh, cell, enabled: bool = False) -> Tuple[int, ...]:
    """Local vertex permutation whose refinement uses the shortest inner edge"""
    if not enabled:
        return IDENTITY_PERMUTATION
    index = cell.index if isinstance(cell, PrimitiveId) else int(cell)
    _check_cell(mesh, index)
    v = mesh.cell_vertices(index)

    def inner_edge_length(perm):
        p = v[list(perm)]
        return float(np.linalg.norm(0.5 * (p[0] + p[2]) - 0.5 * (p[1] + p[3])))

    lengths = {perm: inner_edge_length(perm) for perm in INNER_EDGE_CANDIDATES}
    shortest = min(lengths.values())
    return min(p for p, length in lengths.items() if length <= shortest * (1 + 1e-12))


def apply_inner_edge_permutations(mesh: CoarseMesh) -> CoarseMesh:
    cells = []
    for c, cell in enumerate(mesh.cells):
        perm = select_inner_edge_permutation(mesh, c, enabled=True)
        cells.append(tuple(cell[i] for i in perm))
    overrides = {
        mesh.faces[f]: (False, 0) for f in mesh.boundary_faces if not mesh.boundary_flags[f]
    }
    # swapping v0 and v2 flips the orientation but keeps the v0-v2 / v1-v3 pairing
    cells = _keep_orientation(mesh.vertex_coords, cells, swap=(0, 2))
    return build_mesh(mesh.vertex_coords, cells, overrides)


def _keep_orientation(coords: np.ndarray, cells: List[Cell], swap: Tuple[int, int]) -> List[Cell]:
    out = []
    for cell in cells:
        if _six_volume(coords, cell) < 0:
            a, b = swap
            cell = list(cell)
            cell[a], cell[b] = cell[b], cell[a]
            cell = tuple(cell)
        out.append(cell)
    return out


# built-in generators


def reference_tetrahedron() -> CoarseMesh:
    coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    return build_mesh(coords, [(0, 1, 2, 3)])


def two_tetrahedra() -> CoarseMesh:
    """Reference tetrahedron plus a second cell across its slanted face"""
    coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float)
    return build_mesh(coords, [(0, 1, 2, 3), (1, 2, 3, 4)])


def kuhn_cube() -> CoarseMesh:
    """Unit cube split into six tetrahedra along the main diagonal.

    Vertex ids are x + 2y + 4z. Each cell follows a monotone path from
    (0,0,0) to (1,1,1); paths of odd axis permutations get v2 and v3
    swapped so every cell is positively oriented.
    """
    coords = np.array(
        [[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float
    )
    cells = []
    for axes in permutations(range(3)):
        path = [0]
        for axis in axes:
            path.append(path[-1] + (1 << axis))
        cells.append(tuple(path))
    return build_mesh(coords, _keep_orientation(coords, cells, swap=(2, 3)))


GENERATORS = {
    "ref-tet": reference_tetrahedron,
    "cube-kuhn": kuhn_cube,
    "two-tets": two_tetrahedra,
}


def load_mesh(source: str, optimize_inner_edge: bool = False) -> CoarseMesh:
    """Built-in generator name or path to a mesh file"""
    if source in GENERATORS:
        mesh = GENERATORS[source]()
        return apply_inner_edge_permutations(mesh) if optimize_inner_edge else mesh
    with open(source, "r", encoding="utf-8") as handle:
        return parse_mesh(handle.read(), optimize_inner_edge=optimize_inner_edge)
