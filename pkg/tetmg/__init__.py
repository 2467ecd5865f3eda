"""Matrix-free multigrid kernels on block-structured tetrahedral grids."""

__version__ = "0.1.0"
