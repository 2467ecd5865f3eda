from typing import Optional, Dict, Any


class TetGridError(Exception):
    """Base exception for mesh, indexing and solver errors"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)


class MeshParseError(TetGridError):
    """Mesh file syntax error; details carry the offending line"""

    def __init__(self, message: str, line: int, details: Optional[Dict[str, Any]] = None):
        self.line = line
        super().__init__(f"line {line}: {message}", {"line": line, **(details or {})})


class DegenerateCellError(TetGridError):
    """Cell with zero volume"""
    pass


class NonConformingMeshError(TetGridError):
    """Face shared by more than two cells, or a hanging node"""
    pass


class IndexRangeError(TetGridError, IndexError):
    """Lattice index, offset or DoF index out of range"""
    pass


class LevelError(TetGridError, ValueError):
    """Refinement level outside the supported range"""
    pass


class DescriptorMismatchError(TetGridError):
    """Functions over different spaces or meshes combined"""
    pass


class UnsupportedFormError(TetGridError):
    """Bilinear form not supported by the requested kernel"""
    pass


class PointLocationError(TetGridError):
    """Point lies outside the domain"""
    pass


class TaxonomyError(TetGridError):
    """Subgroup classification disagrees with the frozen tables"""
    pass


class SolverBreakdownError(TetGridError):
    """Krylov breakdown, e.g. non-positive curvature in CG"""
    pass


class SolverDivergenceError(TetGridError):
    """Iteration diverged or produced non-finite values"""
    pass


class MissingPrerequisiteError(TetGridError):
    """Smoother or solver called without its setup data"""
    pass


class ExportError(TetGridError):
    """Writing an output file failed"""
    pass
