from .mesh import CoarseMesh, MacroCellMap, PrimitiveGraph, PrimitiveId
from .space import Layout, SpaceDescriptor, SpaceEntry, p1, p1_vector, p2
from .subgroups import PrimitiveKind, SubgroupId

__all__ = [
    "CoarseMesh",
    "MacroCellMap",
    "PrimitiveGraph",
    "PrimitiveId",
    "Layout",
    "SpaceDescriptor",
    "SpaceEntry",
    "p1",
    "p1_vector",
    "p2",
    "PrimitiveKind",
    "SubgroupId",
]
