"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter value lies outside the knot range."""


class MeshTooCoarseError(ValueError):
    """The mesh has too few knots for vertex modification."""


class ConfigurationError(ValueError):
    """Inconsistent strategy, dual kind or study configuration."""


class GeometryError(RuntimeError):
    """Geometry map inversion or Jacobian failure."""


class AssemblyError(RuntimeError):
    """Constraint blocks do not have the structure required for elimination."""


class ConvergenceError(RuntimeError):
    """Iterative solver did not reach the requested tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
