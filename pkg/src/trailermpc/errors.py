"""Exception hierarchy shared across the library."""


class TrailerMpcError(Exception):
    """Base class for all library errors."""


class ModelError(TrailerMpcError):
    """Invalid state, input or parameter fed to the vehicle model."""


class IntegrationError(TrailerMpcError):
    """Numerical integration produced a non-finite value."""

    def __init__(self, message, substep=None):
        super().__init__(message)
        self.substep = substep


class QpError(TrailerMpcError):
    """Box-QP could not be solved (non-convex after regularization)."""


class QpIterationError(QpError):
    """Active-set iteration limit exceeded; carries the best iterate."""

    def __init__(self, message, best_solution=None):
        super().__init__(message)
        self.best_solution = best_solution


class SolverError(TrailerMpcError):
    """A Gauss-Newton controller/estimator step failed.

    ``node`` identifies the shooting node at which the failure was
    detected, when that is known.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class EstimatorError(TrailerMpcError):
    """Estimation window misuse (too few measurements, bad ordering)."""


class ConfigError(TrailerMpcError):
    """Configuration file failed validation."""


class SchemaError(TrailerMpcError):
    """A delimited output file does not match the expected schema."""
