"""Micro-primitive subgroup taxonomy of a regularly refined tetrahedron.

Every micro-primitive on a refined reference tetrahedron belongs to one of
26 translation classes (1 vertex, 7 edge, 12 face, 6 cell subgroups). The
instances of one subgroup on level l are the translates ``p + offsets`` for
``p`` in the tetrahedral index set of side length ``2**l + width_shift``.

The tables below are frozen data. ``tests/test_refinement_oracle.py`` and
``python -m tetmg.tasks.generate_tables check`` re-derive them from the
constructive refinement and fail on any difference.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

Lattice = Tuple[int, int, int]


class PrimitiveKind(str, Enum):
    VERTEX = "vertex"
    EDGE = "edge"
    FACE = "face"
    CELL = "cell"

    @property
    def n_vertices(self) -> int:
        return _KIND_VERTICES[self]


_KIND_VERTICES = {
    PrimitiveKind.VERTEX: 1,
    PrimitiveKind.EDGE: 2,
    PrimitiveKind.FACE: 3,
    PrimitiveKind.CELL: 4,
}


class SubgroupId(Enum):
    """(kind, tag) address of a micro-primitive subgroup"""

    V = (PrimitiveKind.VERTEX, "V")

    EDGE_X = (PrimitiveKind.EDGE, "x")
    EDGE_Y = (PrimitiveKind.EDGE, "y")
    EDGE_Z = (PrimitiveKind.EDGE, "z")
    EDGE_XY = (PrimitiveKind.EDGE, "xy")
    EDGE_XZ = (PrimitiveKind.EDGE, "xz")
    EDGE_YZ = (PrimitiveKind.EDGE, "yz")
    EDGE_XYZ = (PrimitiveKind.EDGE, "xyz")

    FACE_Z_UP = (PrimitiveKind.FACE, "z-up")
    FACE_Z_DOWN = (PrimitiveKind.FACE, "z-down")
    FACE_Y_UP = (PrimitiveKind.FACE, "y-up")
    FACE_Y_DOWN = (PrimitiveKind.FACE, "y-down")
    FACE_X_UP = (PrimitiveKind.FACE, "x-up")
    FACE_X_DOWN = (PrimitiveKind.FACE, "x-down")
    FACE_XYZ_UP = (PrimitiveKind.FACE, "xyz-up")
    FACE_XYZ_DOWN = (PrimitiveKind.FACE, "xyz-down")
    FACE_XY_UP = (PrimitiveKind.FACE, "xy-up")
    FACE_XY_DOWN = (PrimitiveKind.FACE, "xy-down")
    FACE_YZ_UP = (PrimitiveKind.FACE, "yz-up")
    FACE_YZ_DOWN = (PrimitiveKind.FACE, "yz-down")

    CELL_I_UP = (PrimitiveKind.CELL, "I-up")
    CELL_I_DOWN = (PrimitiveKind.CELL, "I-down")
    CELL_II_UP = (PrimitiveKind.CELL, "II-up")
    CELL_II_DOWN = (PrimitiveKind.CELL, "II-down")
    CELL_III_UP = (PrimitiveKind.CELL, "III-up")
    CELL_III_DOWN = (PrimitiveKind.CELL, "III-down")

    @property
    def kind(self) -> PrimitiveKind:
        return self.value[0]

    @property
    def tag(self) -> str:
        return self.value[1]

    @property
    def label(self) -> str:
        return f"{self.kind.value}:{self.tag}"

    @classmethod
    def from_label(cls, label: str) -> "SubgroupId":
        for member in cls:
            if member.label == label:
                return member
        raise KeyError(label)

    @classmethod
    def of_kind(cls, kind: PrimitiveKind) -> Tuple["SubgroupId", ...]:
        return tuple(member for member in cls if member.kind == kind)


@dataclass(frozen=True)
class SubgroupShape:
    # w(l) = 2**l + width_shift
    width_shift: int
    # lattice vertices of the instance with index (0, 0, 0)
    offsets: Tuple[Lattice, ...]
    published_width: str


SUBGROUP_TABLE: Dict[SubgroupId, SubgroupShape] = {
    SubgroupId.V: SubgroupShape(1, ((0, 0, 0),), "2^l + 1"),
    # edges
    SubgroupId.EDGE_X: SubgroupShape(0, ((0, 0, 0), (1, 0, 0)), "2^l"),
    SubgroupId.EDGE_Y: SubgroupShape(0, ((0, 0, 0), (0, 1, 0)), "2^l"),
    SubgroupId.EDGE_Z: SubgroupShape(0, ((0, 0, 0), (0, 0, 1)), "2^l"),
    SubgroupId.EDGE_XY: SubgroupShape(0, ((1, 0, 0), (0, 1, 0)), "2^l"),
    SubgroupId.EDGE_XZ: SubgroupShape(0, ((1, 0, 0), (0, 0, 1)), "2^l"),
    SubgroupId.EDGE_YZ: SubgroupShape(0, ((0, 1, 0), (0, 0, 1)), "2^l"),
    SubgroupId.EDGE_XYZ: SubgroupShape(-1, ((0, 1, 0), (1, 0, 1)), "2^l - 1"),
    # faces
    SubgroupId.FACE_Z_UP: SubgroupShape(0, ((0, 0, 0), (1, 0, 0), (0, 1, 0)), "2^l"),
    SubgroupId.FACE_Z_DOWN: SubgroupShape(-1, ((1, 0, 0), (0, 1, 0), (1, 1, 0)), "2^l - 1"),
    SubgroupId.FACE_Y_UP: SubgroupShape(0, ((0, 0, 0), (1, 0, 0), (0, 0, 1)), "2^l"),
    SubgroupId.FACE_Y_DOWN: SubgroupShape(-1, ((1, 0, 0), (0, 0, 1), (1, 0, 1)), "2^l - 1"),
    SubgroupId.FACE_X_UP: SubgroupShape(0, ((0, 0, 0), (0, 1, 0), (0, 0, 1)), "2^l"),
    SubgroupId.FACE_X_DOWN: SubgroupShape(-1, ((0, 1, 0), (0, 0, 1), (0, 1, 1)), "2^l - 1"),
    SubgroupId.FACE_XYZ_UP: SubgroupShape(0, ((1, 0, 0), (0, 1, 0), (0, 0, 1)), "2^l"),
    SubgroupId.FACE_XYZ_DOWN: SubgroupShape(-1, ((1, 1, 0), (1, 0, 1), (0, 1, 1)), "2^l - 2"),
    SubgroupId.FACE_XY_UP: SubgroupShape(-1, ((1, 0, 0), (0, 1, 0), (1, 0, 1)), "2^l - 1"),
    SubgroupId.FACE_XY_DOWN: SubgroupShape(-1, ((0, 1, 0), (1, 0, 1), (0, 1, 1)), "2^l - 1"),
    SubgroupId.FACE_YZ_UP: SubgroupShape(-1, ((0, 1, 0), (0, 0, 1), (1, 0, 1)), "2^l - 1"),
    SubgroupId.FACE_YZ_DOWN: SubgroupShape(-1, ((0, 1, 0), (1, 1, 0), (1, 0, 1)), "2^l - 1"),
    # cells
    SubgroupId.CELL_I_UP: SubgroupShape(
        0, ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)), "2^l"
    ),
    SubgroupId.CELL_I_DOWN: SubgroupShape(
        -2, ((1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)), "2^l - 2"
    ),
    SubgroupId.CELL_II_UP: SubgroupShape(
        -1, ((1, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 1)), "2^l - 1"
    ),
    SubgroupId.CELL_II_DOWN: SubgroupShape(
        -1, ((0, 1, 0), (1, 0, 1), (0, 1, 1), (0, 0, 1)), "2^l - 1"
    ),
    SubgroupId.CELL_III_UP: SubgroupShape(
        -1, ((1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1)), "2^l - 1"
    ),
    SubgroupId.CELL_III_DOWN: SubgroupShape(
        -1, ((0, 1, 0), (1, 1, 0), (1, 0, 1), (0, 1, 1)), "2^l - 1"
    ),
}

# Rows where the shipped width differs from the published side-length table.
# The constructive count wins; the face and Euler identities only hold with it.
TABLE_DEVIATIONS: Dict[SubgroupId, Dict[str, str]] = {
    SubgroupId.FACE_XYZ_DOWN: {
        "published": "2^l - 2",
        "shipped": "2^l - 1",
        "reason": (
            "constructive count is n_tet(2^l - 1); the n_tet(2^l - 1) - n_tet(2^l - 2) "
            "instances on the macro face x+y+z=1 are missing from the published value, "
            "which gives 154 instead of 2*8^l + 2*4^l = 160 faces at l=2 and breaks V-E+F-C=1"
        ),
    },
}

CELL_SUBGROUPS = SubgroupId.of_kind(PrimitiveKind.CELL)
EDGE_SUBGROUPS = SubgroupId.of_kind(PrimitiveKind.EDGE)
FACE_SUBGROUPS = SubgroupId.of_kind(PrimitiveKind.FACE)
