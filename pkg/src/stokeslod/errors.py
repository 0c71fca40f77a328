"""Exception types shared across the package."""


class MeshStructureError(Exception):
    """Raised when a mesh violates a structural invariant (e.g. non-manifold edge)."""


class ValidationError(Exception):
    """Raised when an input violates a documented precondition."""


class SolverError(Exception):
    """Raised when a linear solve fails; carries diagnostic info if available."""
