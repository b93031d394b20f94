"""Exception types shared across the package."""


class SparseOdeError(Exception):
    """Base class for all errors raised by sparseode."""


class DimensionError(SparseOdeError, ValueError):
    """Array shapes or lengths are inconsistent."""


class DomainError(SparseOdeError, ValueError):
    """Input lies outside the mathematical domain of an operation."""


class SpecificationError(SparseOdeError, ValueError):
    """A model specification (stoichiometry, exponents, penalty) is invalid."""


class SolverDivergedError(SparseOdeError, RuntimeError):
    """A trajectory left the admissible region (overflow guard or non-finite field)."""

    def __init__(self, message, trajectory=None, environment=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.environment = environment


class StepLimitError(SparseOdeError, RuntimeError):
    """The solver exhausted its step budget; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class OptimStallError(SparseOdeError, RuntimeError):
    """Every backtracking attempt failed; carries the best state seen so far."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class InfeasibleSearchError(SparseOdeError, RuntimeError):
    """An exhaustive search was refused because it is computationally infeasible."""


class DataError(SparseOdeError, ValueError):
    """A dataset violates its invariants."""


class ConfigError(SparseOdeError, ValueError):
    """An experiment or CLI configuration is invalid."""


class SchemaError(SparseOdeError, ValueError):
    """A persisted file has an unknown or incompatible schema version."""
