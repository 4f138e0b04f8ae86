"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user input: mesh parameters, problem data, config files."""


class MeshFormatError(RuntimeError):
    """Mesh file cannot be parsed or describes an invalid triangulation."""


class MonotonicityError(RuntimeError):
    """A monotone scheme cannot be obtained (non-acute mesh or failed
    operator certification).  Carries a human-readable diagnostic naming
    the offending mesh pair or operator entry."""


class NonConvergenceError(RuntimeError):
    """Policy iteration exceeded its iteration budget.

    Attributes:
        residual_history: sup-norm residuals recorded before the failure.
    """

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = tuple(residual_history)


class SolverError(RuntimeError):
    """Linear solver breakdown: singular system or residual above tolerance."""


class QueryError(ValueError):
    """Evaluation request outside the space-time domain."""
