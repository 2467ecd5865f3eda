from pydantic_settings import BaseSettings
from pydantic import validator
from typing import List


class Settings(BaseSettings):
    # App Configuration
    APP_NAME: str = "tetmg"
    ENVIRONMENT: str = "development"

    # Level guards
    MIN_LEVEL: int = 2
    MAX_LEVEL: int = 6
    ORACLE_MAX_LEVEL: int = 6

    # Multigrid
    COARSE_LEVEL: int = 2
    CYCLES_PER_LEVEL: int = 5
    COARSE_TOL: float = 1e-12
    COARSE_MAXIT: int = 500

    # Smoothers
    POWER_ITERATIONS: int = 25
    LAMBDA_SAFETY: float = 1.1
    CHEBYSHEV_ORDER: int = 2
    CHEBYSHEV_LO: float = 0.25
    CHEBYSHEV_HI: float = 1.1

    # Runs
    DEFAULT_SEED: int = 42
    THREADS: int = 1
    MESH_GENERATORS: List[str] = ["ref-tet", "cube-kuhn", "two-tets"]

    # Monitoring
    METRICS_ENABLED: bool = True

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "console"  # console, json

    @validator("MESH_GENERATORS", pre=True)
    def assemble_mesh_generators(cls, v):
        if isinstance(v, str):
            return [i.strip() for i in v.split(",")]
        elif isinstance(v, list):
            return v
        raise ValueError("MESH_GENERATORS must be a comma-separated string or list")

    @validator("MAX_LEVEL")
    def check_level_range(cls, v, values):
        if v < values.get("MIN_LEVEL", 2):
            raise ValueError("MAX_LEVEL must not be below MIN_LEVEL")
        return v

    @validator("CHEBYSHEV_HI")
    def check_chebyshev_interval(cls, v, values):
        lo = values.get("CHEBYSHEV_LO", 0.25)
        if not 0 < lo < v:
            raise ValueError("Chebyshev interval fractions must satisfy 0 < lo < hi")
        return v

    @validator("LOG_FORMAT")
    def check_log_format(cls, v):
        if v not in ("console", "json"):
            raise ValueError("LOG_FORMAT must be 'console' or 'json'")
        return v

    class Config:
        env_file = ".env"
        env_prefix = "TETMG_"
        case_sensitive = True


settings = Settings()
