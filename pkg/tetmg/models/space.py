from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from tetmg.models.subgroups import EDGE_SUBGROUPS, SubgroupId


class Layout(str, Enum):
    """Interleaving of the m DoFs stored per micro-primitive"""

    AOS = "aos"
    SOA = "soa"


@dataclass(frozen=True)
class SpaceEntry:
    subgroups: Tuple[SubgroupId, ...]
    m: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if len(set(self.subgroups)) != len(self.subgroups):
            raise ValueError("duplicate subgroup in space entry")


@dataclass(frozen=True)
class SpaceDescriptor:
    name: str
    entries: Tuple[SpaceEntry, ...]
    layout: Layout = Layout.AOS

    def __post_init__(self):
        seen = [s for entry in self.entries for s in entry.subgroups]
        if len(set(seen)) != len(seen):
            raise ValueError("subgroups must be distinct across entries")

    @property
    def slots(self) -> Tuple[Tuple[SubgroupId, int], ...]:
        """(subgroup, m) in storage order"""
        return tuple((s, entry.m) for entry in self.entries for s in entry.subgroups)

    @property
    def is_p1(self) -> bool:
        return self.slots == ((SubgroupId.V, 1),)

    def with_layout(self, layout: Layout) -> "SpaceDescriptor":
        return SpaceDescriptor(self.name, self.entries, Layout(layout))


def p1(layout: Layout = Layout.AOS) -> SpaceDescriptor:
    return SpaceDescriptor("P1", (SpaceEntry((SubgroupId.V,), 1),), Layout(layout))


def p2(layout: Layout = Layout.AOS) -> SpaceDescriptor:
    return SpaceDescriptor(
        "P2",
        (SpaceEntry((SubgroupId.V,), 1), SpaceEntry(EDGE_SUBGROUPS, 1)),
        Layout(layout),
    )


def p1_vector(layout: Layout = Layout.AOS, m: int = 3) -> SpaceDescriptor:
    return SpaceDescriptor("P1_VECTOR", (SpaceEntry((SubgroupId.V,), m),), Layout(layout))
