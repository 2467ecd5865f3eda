from typing import ClassVar, Dict, List, Optional, Tuple

from pydantic import BaseModel


class CGReport(BaseModel):
    iterations: int
    residual: float
    relative_residual: float
    converged: bool
    history: List[float] = []


class IterationRecord(BaseModel):
    """One CSV row of a multigrid run"""

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = ("level", "cycle", "residual", "error", "seconds")

    level: int
    cycle: int
    residual: float
    error: Optional[float] = None
    seconds: float = 0.0

    def csv_row(self) -> Dict[str, str]:
        return {
            "level": str(self.level),
            "cycle": str(self.cycle),
            "residual": f"{self.residual:.6e}",
            "error": "" if self.error is None else f"{self.error:.6e}",
            "seconds": f"{self.seconds:.4f}",
        }


class SolveReport(BaseModel):
    solver: str
    records: List[IterationRecord] = []
    vcycles: int = 0
    # final L2 error per level when an exact solution is known
    errors: Dict[int, float] = {}


class StudyRow(BaseModel):
    """One level of a manufactured-solution convergence study"""

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = (
        "level", "dofs", "l2_error", "order", "residual", "seconds",
    )

    level: int
    dofs: int
    l2_error: float
    order: Optional[float] = None
    residual: float
    seconds: float

    def csv_row(self) -> Dict[str, str]:
        return {
            "level": str(self.level),
            "dofs": str(self.dofs),
            "l2_error": f"{self.l2_error:.6e}",
            "order": "" if self.order is None else f"{self.order:.3f}",
            "residual": f"{self.residual:.6e}",
            "seconds": f"{self.seconds:.4f}",
        }
