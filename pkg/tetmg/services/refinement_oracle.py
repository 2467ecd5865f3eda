"""Constructive ground truth for the subgroup taxonomy.

The reference tetrahedron is refined recursively with Bey's rule on exact
integer lattices (coordinates in units of 2**-level). The resulting element
soup is split into vertices, edges, faces and cells, and every kind is
grouped into translation classes. Nothing here runs in the operator hot
path; the tables in ``tetmg.models.subgroups`` are checked against it.
"""
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Dict, FrozenSet, List, NamedTuple, Tuple

import structlog

from tetmg.core.config import settings
from tetmg.core.exceptions import LevelError, TaxonomyError, TetGridError
from tetmg.models.subgroups import SUBGROUP_TABLE, Lattice, PrimitiveKind, SubgroupId
from tetmg.services.indexing import MIN_TAXONOMY_LEVEL, iter_index_set, n_tet, width

logger = structlog.get_logger()

Primitive = Tuple[Lattice, ...]
CongruenceClassKey = Tuple[Lattice, ...]

EXPECTED_CLASS_COUNTS = {
    PrimitiveKind.VERTEX: 1,
    PrimitiveKind.EDGE: 7,
    PrimitiveKind.FACE: 12,
    PrimitiveKind.CELL: 6,
}


class LatticeTet(NamedTuple):
    v0: Lattice
    v1: Lattice
    v2: Lattice
    v3: Lattice


REFERENCE_TET = LatticeTet((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


def _mid(a: Lattice, b: Lattice) -> Lattice:
    return ((a[0] + b[0]) // 2, (a[1] + b[1]) // 2, (a[2] + b[2]) // 2)


def _double(v: Lattice) -> Lattice:
    return (2 * v[0], 2 * v[1], 2 * v[2])


def six_volume(t: LatticeTet) -> int:
    """Signed 6 * volume in lattice units"""
    a = [t.v1[c] - t.v0[c] for c in range(3)]
    b = [t.v2[c] - t.v0[c] for c in range(3)]
    d = [t.v3[c] - t.v0[c] for c in range(3)]
    return (
        a[0] * (b[1] * d[2] - b[2] * d[1])
        - a[1] * (b[0] * d[2] - b[2] * d[0])
        + a[2] * (b[0] * d[1] - b[1] * d[0])
    )


def bey_refine(t: LatticeTet) -> List[LatticeTet]:
    """Split ``t`` into its eight children T1..T8.

    All coordinates must be even so that edge midpoints stay on the lattice.
    """
    if any(c % 2 for v in t for c in v):
        raise TetGridError("bey_refine needs even lattice coordinates", {"tet": tuple(t)})
    v0, v1, v2, v3 = t
    v01, v02, v03 = _mid(v0, v1), _mid(v0, v2), _mid(v0, v3)
    v12, v13, v23 = _mid(v1, v2), _mid(v1, v3), _mid(v2, v3)
    return [
        LatticeTet(v0, v01, v02, v03),
        LatticeTet(v01, v1, v12, v13),
        LatticeTet(v02, v12, v2, v23),
        LatticeTet(v03, v13, v23, v3),
        LatticeTet(v01, v02, v03, v13),
        LatticeTet(v01, v02, v12, v13),
        LatticeTet(v02, v03, v13, v23),
        LatticeTet(v02, v12, v13, v23),
    ]


@lru_cache(maxsize=8)
def _refine(level: int) -> Tuple[LatticeTet, ...]:
    tets = [REFERENCE_TET]
    for _ in range(level):
        tets = [
            child
            for t in tets
            for child in bey_refine(LatticeTet(*(_double(v) for v in t)))
        ]
    return tuple(tets)


def refine_to_level(level: int) -> List[LatticeTet]:
    """8**level tetrahedra on the lattice of side 2**level"""
    if level < 0:
        raise LevelError("level must be non-negative", {"level": level})
    if level > settings.ORACLE_MAX_LEVEL:
        raise LevelError(
            "oracle refinement above the desk-scale guard",
            {"level": level, "max_level": settings.ORACLE_MAX_LEVEL},
        )
    return list(_refine(level))


@dataclass(frozen=True)
class Soup:
    """Distinct micro-primitives of the refined reference tetrahedron"""

    level: int
    vertices: Tuple[Primitive, ...]
    edges: Tuple[Primitive, ...]
    faces: Tuple[Primitive, ...]
    cells: Tuple[Primitive, ...]
    face_incidence: Dict[Primitive, int] = field(compare=False, repr=False)

    def of_kind(self, kind: PrimitiveKind) -> Tuple[Primitive, ...]:
        return {
            PrimitiveKind.VERTEX: self.vertices,
            PrimitiveKind.EDGE: self.edges,
            PrimitiveKind.FACE: self.faces,
            PrimitiveKind.CELL: self.cells,
        }[kind]

    @property
    def boundary_faces(self) -> Tuple[Primitive, ...]:
        return tuple(f for f in self.faces if self.face_incidence[f] == 1)


@lru_cache(maxsize=8)
def element_soup(level: int) -> Soup:
    tets = refine_to_level(level)
    vertices, edges = set(), set()
    faces: Counter = Counter()
    cells = set()
    for t in tets:
        corners = tuple(sorted(t))
        cells.add(corners)
        vertices.update((v,) for v in corners)
        edges.update(combinations(corners, 2))
        faces.update(combinations(corners, 3))
    return Soup(
        level=level,
        vertices=tuple(sorted(vertices)),
        edges=tuple(sorted(edges)),
        faces=tuple(sorted(faces)),
        cells=tuple(sorted(cells)),
        face_incidence=dict(faces),
    )


def congruence_key(primitive: Primitive) -> CongruenceClassKey:
    """Vertex differences relative to the lexicographically smallest vertex"""
    ordered = sorted(primitive)
    a = ordered[0]
    return tuple((v[0] - a[0], v[1] - a[1], v[2] - a[2]) for v in ordered)


def _frozen_keys() -> Dict[CongruenceClassKey, SubgroupId]:
    return {congruence_key(shape.offsets): s for s, shape in SUBGROUP_TABLE.items()}


@dataclass
class SubgroupClass:
    subgroup: SubgroupId
    key: CongruenceClassKey
    members: List[Primitive]
    # lattice vertices of the instance with index (0, 0, 0)
    offsets: Tuple[Lattice, ...]
    indices: FrozenSet[Lattice]

    @property
    def count(self) -> int:
        return len(self.members)


def _build_class(subgroup: SubgroupId, key: CongruenceClassKey, members: List[Primitive]):
    members = sorted(members, key=lambda m: min(m))
    anchors = [min(m) for m in members]
    base = tuple(min(a[c] for a in anchors) for c in range(3))
    indices = frozenset(
        (a[0] - base[0], a[1] - base[1], a[2] - base[2]) for a in anchors
    )
    offsets = tuple(
        sorted((base[0] + d[0], base[1] + d[1], base[2] + d[2]) for d in key)
    )
    return SubgroupClass(subgroup, key, members, offsets, indices)


@lru_cache(maxsize=8)
def _classify(level: int) -> Dict[CongruenceClassKey, SubgroupClass]:
    soup = element_soup(level)
    known = _frozen_keys()
    result: Dict[CongruenceClassKey, SubgroupClass] = {}
    for kind in PrimitiveKind:
        groups: Dict[CongruenceClassKey, List[Primitive]] = defaultdict(list)
        for primitive in soup.of_kind(kind):
            groups[congruence_key(primitive)].append(primitive)
        if level >= MIN_TAXONOMY_LEVEL and len(groups) != EXPECTED_CLASS_COUNTS[kind]:
            raise TaxonomyError(
                f"unexpected number of {kind.value} classes",
                {"level": level, "found": len(groups), "expected": EXPECTED_CLASS_COUNTS[kind]},
            )
        for key, members in groups.items():
            if key not in known:
                raise TaxonomyError(
                    "class matches no frozen subgroup", {"level": level, "key": key}
                )
            result[key] = _build_class(known[key], key, members)
    logger.debug("Classified element soup", level=level, classes=len(result))
    return result


def classify(level: int) -> Dict[CongruenceClassKey, SubgroupClass]:
    """Map congruence key -> subgroup class with count and sorted members"""
    return dict(_classify(level))


def classes_by_subgroup(level: int) -> Dict[SubgroupId, SubgroupClass]:
    return {c.subgroup: c for c in _classify(level).values()}


def euler_check(level: int) -> int:
    """V - E + F - C of the refined reference tetrahedron"""
    soup = element_soup(level)
    return len(soup.vertices) - len(soup.edges) + len(soup.faces) - len(soup.cells)


@dataclass(frozen=True)
class TaxonomyRow:
    subgroup: SubgroupId
    count: int
    expected: int
    width: int
    published_width: str
    offsets_match: bool
    indices_match: bool

    @property
    def ok(self) -> bool:
        return self.count == self.expected and self.offsets_match and self.indices_match


def verify_tables(level: int) -> List[TaxonomyRow]:
    """Compare every occurring class against the frozen width/offset tables"""
    found = classes_by_subgroup(level)
    rows = []
    for subgroup, shape in SUBGROUP_TABLE.items():
        cls = found.get(subgroup)
        try:
            w = width(subgroup, level)
        except LevelError:
            w = 0
        count = cls.count if cls else 0
        offsets_match = cls is None or cls.offsets == tuple(sorted(shape.offsets))
        indices_match = cls is None or cls.indices == frozenset(iter_index_set(w))
        if cls is None and level >= MIN_TAXONOMY_LEVEL:
            offsets_match = indices_match = False
        rows.append(
            TaxonomyRow(
                subgroup=subgroup,
                count=count,
                expected=n_tet(w),
                width=w,
                published_width=shape.published_width,
                offsets_match=offsets_match,
                indices_match=indices_match,
            )
        )
    return rows
