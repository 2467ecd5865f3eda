"""Closed-form indexing of micro-primitives on one refined macro-cell.

Index sets, cardinalities, subgroup widths, the linearization ``t_w`` and its
AoS/SoA extensions, and the loop nests that visit memory consecutively.
All functions are pure; the vectorised variants operate on ``(n, 3)`` integer
arrays of lattice indices.
"""
from functools import lru_cache
from typing import Iterator, List, Tuple

import numpy as np

from tetmg.core.exceptions import IndexRangeError, LevelError
from tetmg.models.space import SpaceDescriptor
from tetmg.models.subgroups import SUBGROUP_TABLE, Lattice, SubgroupId

MIN_TAXONOMY_LEVEL = 2


def n_tri(w: int) -> int:
    """Triangular number, the cardinality of I_tri(w)"""
    if w < 0:
        raise IndexRangeError("width must be non-negative", {"w": w})
    return w * (w + 1) // 2


def n_tet(w: int) -> int:
    """Tetrahedral number, the cardinality of I_tet(w)"""
    if w < 0:
        raise IndexRangeError("width must be non-negative", {"w": w})
    return w * (w + 1) * (w + 2) // 6


def width(subgroup: SubgroupId, level: int) -> int:
    """Side length w(l) of the index polytope of ``subgroup`` on ``level``.

    Below level 2 only subgroups that actually occur are defined.
    """
    if level < 0:
        raise LevelError("level must be non-negative", {"level": level})
    w = 2**level + SUBGROUP_TABLE[subgroup].width_shift
    if w < 1:
        raise LevelError(
            f"subgroup {subgroup.label} does not occur on level {level}",
            {"subgroup": subgroup.label, "level": level},
        )
    return w


def vertex_width(level: int) -> int:
    return width(SubgroupId.V, level)


def require_taxonomy_level(level: int) -> None:
    if level < MIN_TAXONOMY_LEVEL:
        raise LevelError(
            "taxonomy incomplete below level 2",
            {"level": level, "min_level": MIN_TAXONOMY_LEVEL},
        )


def contains(w: int, p: Lattice) -> bool:
    i, j, k = p
    return i >= 0 and j >= 0 and k >= 0 and i + j + k < w


def _check_index(w: int, p: Lattice) -> None:
    if not contains(w, p):
        raise IndexRangeError(
            f"index {tuple(p)} outside I_tet({w})", {"w": w, "index": tuple(p)}
        )


def iter_index_set(w: int) -> Iterator[Lattice]:
    """I_tet(w) in loop-nest order: k outer, j middle, i inner"""
    for k in range(w):
        for j in range(w - k):
            for i in range(w - k - j):
                yield (i, j, k)


@lru_cache(maxsize=64)
def _index_array(w: int) -> np.ndarray:
    idx = np.array(list(iter_index_set(w)), dtype=np.int64).reshape(-1, 3)
    idx.setflags(write=False)
    return idx


def index_set(w: int) -> np.ndarray:
    """I_tet(w) as a read-only ``(n_tet(w), 3)`` array in loop-nest order"""
    if w < 0:
        raise IndexRangeError("width must be non-negative", {"w": w})
    return _index_array(w)


def linearize(w: int, p: Lattice) -> int:
    """t_w(i, j, k), the position of p in the loop-nest order of I_tet(w)"""
    _check_index(w, p)
    i, j, k = p
    return n_tet(w) - n_tet(w - k) + n_tri(w - k) - n_tri(w - k - j) + i


def linearize_array(w: int, idx: np.ndarray) -> np.ndarray:
    """Vectorised t_w for an ``(n, 3)`` array of in-range indices"""
    idx = np.asarray(idx, dtype=np.int64)
    i, j, k = idx[..., 0], idx[..., 1], idx[..., 2]
    wk = w - k
    wkj = wk - j
    return (
        n_tet(w)
        - wk * (wk + 1) * (wk + 2) // 6
        + wk * (wk + 1) // 2
        - wkj * (wkj + 1) // 2
        + i
    )


def delinearize(w: int, offset: int) -> Lattice:
    """Inverse of t_w by layer-wise subtraction: find k, then j, then i"""
    if not 0 <= offset < n_tet(w):
        raise IndexRangeError(
            f"offset {offset} outside [0, {n_tet(w)})", {"w": w, "offset": offset}
        )
    rest = offset
    k = 0
    while rest >= n_tri(w - k):
        rest -= n_tri(w - k)
        k += 1
    j = 0
    while rest >= w - k - j:
        rest -= w - k - j
        j += 1
    return (rest, j, k)


def _check_dof(m: int, d: int) -> None:
    if m < 1 or not 0 <= d < m:
        raise IndexRangeError(f"DoF index {d} outside [0, {m})", {"m": m, "d": d})


def linearize_aos(w: int, m: int, p: Lattice, d: int) -> int:
    _check_dof(m, d)
    return m * linearize(w, p) + d


def linearize_soa(w: int, m: int, p: Lattice, d: int) -> int:
    _check_dof(m, d)
    return d * n_tet(w) + linearize(w, p)


def iter_aos(w: int, m: int) -> Iterator[Tuple[Lattice, int, int]]:
    """(p, d, offset) with the DoF loop innermost; offsets run 0, 1, 2, ..."""
    for p in iter_index_set(w):
        for d in range(m):
            yield p, d, linearize_aos(w, m, p, d)


def iter_soa(w: int, m: int) -> Iterator[Tuple[Lattice, int, int]]:
    """(p, d, offset) with the DoF loop outermost; offsets run 0, 1, 2, ..."""
    for d in range(m):
        for p in iter_index_set(w):
            yield p, d, linearize_soa(w, m, p, d)


def micro_vertex_coord(level: int, p: Lattice) -> Tuple[float, float, float]:
    """Reference coordinate h * (i, j, k) of a micro-vertex, h = 2**-level"""
    _check_index(vertex_width(level), p)
    h = 2.0**-level
    return (h * p[0], h * p[1], h * p[2])


def micro_primitive_vertices(subgroup: SubgroupId, p: Lattice, level: int) -> List[Lattice]:
    """Micro-vertex lattice indices of instance ``p`` of ``subgroup``"""
    require_taxonomy_level(level)
    _check_index(width(subgroup, level), p)
    i, j, k = p
    return [(i + a, j + b, k + c) for a, b, c in SUBGROUP_TABLE[subgroup].offsets]


@lru_cache(maxsize=256)
def _vertex_offsets_of(subgroup: SubgroupId, level: int) -> np.ndarray:
    """Linear vertex-array offsets of all instances, shape (n_tet(w), n_vertices)"""
    w = width(subgroup, level)
    wv = vertex_width(level)
    idx = index_set(w)
    offsets = np.asarray(SUBGROUP_TABLE[subgroup].offsets, dtype=np.int64)
    lattice = idx[:, None, :] + offsets[None, :, :]
    lin = linearize_array(wv, lattice.reshape(-1, 3)).reshape(len(idx), len(offsets))
    lin.setflags(write=False)
    return lin


def vertex_offsets_of(subgroup: SubgroupId, level: int) -> np.ndarray:
    """Gather table: vertex-array positions of every instance's micro-vertices"""
    require_taxonomy_level(level)
    return _vertex_offsets_of(subgroup, level)


def dof_count(descriptor: SpaceDescriptor, level: int) -> int:
    """Total DoFs stored on one macro-cell"""
    require_taxonomy_level(level)
    return sum(m * n_tet(width(s, level)) for s, m in descriptor.slots)
