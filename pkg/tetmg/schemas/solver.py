from enum import Enum

from pydantic import BaseModel, Field, validator

from tetmg.core.config import settings


class SmootherKind(str, Enum):
    GAUSS_SEIDEL = "gs"
    JACOBI = "jacobi"
    CHEBYSHEV = "chebyshev"


class CycleKind(str, Enum):
    V = "V"
    FMG = "FMG"


class SmootherConfig(BaseModel):
    kind: SmootherKind = SmootherKind.GAUSS_SEIDEL
    omega: float = 2.0 / 3.0
    order: int = Field(default_factory=lambda: settings.CHEBYSHEV_ORDER)
    lo: float = Field(default_factory=lambda: settings.CHEBYSHEV_LO)
    hi: float = Field(default_factory=lambda: settings.CHEBYSHEV_HI)
    nu1: int = 1
    nu2: int = 1

    @validator("omega")
    def check_omega(cls, v):
        if not 0 < v <= 1:
            raise ValueError("Jacobi damping must lie in (0, 1]")
        return v

    @validator("order")
    def check_order(cls, v):
        if v < 1:
            raise ValueError("Chebyshev order must be at least 1")
        return v

    @validator("hi")
    def check_interval(cls, v, values):
        lo = values.get("lo", settings.CHEBYSHEV_LO)
        if not 0 < lo < v:
            raise ValueError("Chebyshev interval fractions must satisfy 0 < lo < hi")
        return v

    @validator("nu1", "nu2")
    def check_sweeps(cls, v):
        if v < 0:
            raise ValueError("sweep counts must be non-negative")
        return v


class MultigridConfig(BaseModel):
    coarse_level: int = Field(default_factory=lambda: settings.COARSE_LEVEL)
    cycle: CycleKind = CycleKind.V
    cycles_per_level: int = Field(default_factory=lambda: settings.CYCLES_PER_LEVEL)
    coarse_tol: float = Field(default_factory=lambda: settings.COARSE_TOL)
    coarse_maxit: int = Field(default_factory=lambda: settings.COARSE_MAXIT)
    smoother: SmootherConfig = Field(default_factory=SmootherConfig)
    # growth of the residual over its initial value that counts as divergence
    divergence_factor: float = 1e3

    @validator("coarse_level")
    def check_coarse_level(cls, v):
        if v < 2:
            raise ValueError("coarse level must be at least 2")
        return v

    @validator("cycles_per_level")
    def check_cycles(cls, v):
        if v < 1:
            raise ValueError("cycles_per_level must be at least 1")
        return v
