from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, validator

from tetmg.core.config import settings
from tetmg.models.space import Layout
from tetmg.schemas.solver import SmootherKind
from tetmg.services.operators import Kernel


class Command(str, Enum):
    MESH_INFO = "mesh-info"
    VERIFY_TAXONOMY = "verify-taxonomy"
    POISSON = "poisson"
    EXPORT_VTK = "export-vtk"
    EXPORT_MATRIX = "export-matrix"


class FormName(str, Enum):
    DIFFUSION = "diffusion"
    MASS = "mass"
    DIV_K_GRAD = "divkgrad"


class SolverName(str, Enum):
    CG = "cg"
    VCYCLE = "vcycle"
    FMG = "fmg"


class RunConfig(BaseModel):
    """Validated command-line options; built before anything is allocated"""

    command: Command
    mesh: str = "cube-kuhn"
    min_level: int = 2
    max_level: int = 2
    form: FormName = FormName.DIFFUSION
    kernel: Kernel = Kernel.STENCIL
    layout: Layout = Layout.AOS
    solver: SolverName = SolverName.FMG
    smoother: SmootherKind = SmootherKind.GAUSS_SEIDEL
    nu1: int = 1
    nu2: int = 1
    cycles: int = Field(default_factory=lambda: settings.CYCLES_PER_LEVEL)
    tol: float = 1e-10
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    out: Optional[str] = None
    threads: int = Field(default_factory=lambda: settings.THREADS)
    name: str = "u"
    solve: bool = False
    dirichlet: bool = True
    optimize_inner_edge: bool = False
    metrics: bool = False

    @validator("min_level")
    def check_min_level(cls, v, values):
        # verify-taxonomy may inspect level 1 with a reduced table
        floor = 1 if values.get("command") == Command.VERIFY_TAXONOMY else settings.MIN_LEVEL
        if v < floor:
            raise ValueError(f"level must be at least {floor}")
        return v

    @validator("max_level")
    def check_max_level(cls, v, values):
        if v < values.get("min_level", v):
            raise ValueError("max level must not be below min level")
        # taxonomy checks and convergence studies stop at level 5
        bounded = (Command.VERIFY_TAXONOMY, Command.POISSON)
        ceiling = min(5, settings.MAX_LEVEL) if values.get("command") in bounded else settings.MAX_LEVEL
        if v > ceiling:
            raise ValueError(f"level must be at most {ceiling}")
        return v

    @validator("nu1", "nu2", "cycles")
    def check_counts(cls, v):
        if v < 0:
            raise ValueError("counts must be non-negative")
        return v

    @validator("tol")
    def check_tol(cls, v):
        if not 0 < v < 1:
            raise ValueError("tol must lie in (0, 1)")
        return v

    @validator("threads")
    def check_threads(cls, v):
        if v < 1:
            raise ValueError("threads must be at least 1")
        return v

    @validator("name")
    def check_name(cls, v):
        if not v or any(ch.isspace() for ch in v):
            raise ValueError("field name must be a non-empty word")
        return v
