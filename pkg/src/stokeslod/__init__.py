"""High-order LOD multiscale solver for 2D heterogeneous Stokes problems."""

from stokeslod.mesh import SimplicialMesh, MeshHierarchy, Patch
from stokeslod.fem import CoefficientField

__all__ = ["SimplicialMesh", "MeshHierarchy", "Patch", "CoefficientField"]
