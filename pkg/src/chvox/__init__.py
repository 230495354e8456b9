"""Advective Cahn-Hilliard solver on voxel domains (DG / cell-centered FV)."""

from chvox.basis import DGField, QuadratureRule, ReferenceBasis, l2_project, n_loc
from chvox.grid import VoxelGrid, build_grid, flat_index, tuple_index

__version__ = "0.1.0"

__all__ = [
    "DGField",
    "QuadratureRule",
    "ReferenceBasis",
    "VoxelGrid",
    "build_grid",
    "flat_index",
    "l2_project",
    "n_loc",
    "tuple_index",
]
