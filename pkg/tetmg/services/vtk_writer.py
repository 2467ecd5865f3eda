"""ASCII legacy VTK unstructured-grid output of P1 functions."""
from pathlib import Path
from typing import Dict, Union

import numpy as np
import structlog

from tetmg.core.exceptions import DescriptorMismatchError, ExportError
from tetmg.models.mesh import CoarseMesh
from tetmg.models.space import p1
from tetmg.models.subgroups import CELL_SUBGROUPS, SubgroupId
from tetmg.services.fe_function import FEFunction, build_interface_map, physical_vertices
from tetmg.services.indexing import vertex_offsets_of

logger = structlog.get_logger()

VTK_TETRA = 10


def _points_and_cells(mesh: CoarseMesh, level: int):
    imap = build_interface_map(mesh, p1(), level)
    coords = physical_vertices(mesh, level)
    points = np.zeros((imap.n_owned, 3))
    points[imap.global_ids[imap.owned]] = coords[imap.owned]
    cells = np.concatenate(
        [
            imap.global_ids[c][vertex_offsets_of(s, level)]
            for c in range(mesh.n_cells)
            for s in CELL_SUBGROUPS
        ]
    )
    return imap, points, cells


def render_vtk(mesh: CoarseMesh, level: int, functions: Dict[str, FEFunction], title: str = "tetmg") -> str:
    """Legacy VTK text: owned micro-vertices as points, micro-cells as tetrahedra"""
    imap, points, cells = _points_and_cells(mesh, level)
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    lines += [" ".join(repr(float(v)) for v in p) for p in points]
    lines.append(f"CELLS {len(cells)} {5 * len(cells)}")
    lines += ["4 " + " ".join(str(int(v)) for v in cell) for cell in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(VTK_TETRA)] * len(cells)

    if functions:
        lines.append(f"POINT_DATA {len(points)}")
    for name, fn in functions.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid VTK field name {name!r}")
        if fn.mesh is not mesh or fn.descriptor.slots[0][0] != SubgroupId.V or len(fn.descriptor.slots) != 1:
            raise DescriptorMismatchError(
                "VTK output takes vertex functions on the written mesh", {"name": name}
            )
        values = fn.component_view(level, SubgroupId.V)
        m = values.shape[1]
        field = np.zeros((len(points), m))
        field[imap.global_ids[imap.owned]] = values.transpose(0, 2, 1)[imap.owned]
        if m == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in field[:, 0]]
        else:
            padded = np.zeros((len(points), 3))
            padded[:, : min(m, 3)] = field[:, :3]
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(repr(float(v)) for v in row) for row in padded]
    return "\n".join(lines) + "\n"


def write_vtk(
    path: Union[str, Path],
    mesh: CoarseMesh,
    level: int,
    functions: Dict[str, FEFunction],
    title: str = "tetmg",
) -> Path:
    path = Path(path)
    text = render_vtk(mesh, level, functions, title)
    try:
        path.write_text(text)
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}", {"path": str(path)}) from e
    logger.info("VTK written", path=str(path), level=level, fields=list(functions))
    return path
