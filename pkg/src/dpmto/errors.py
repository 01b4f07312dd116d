"""Exception types raised by the solver."""


class DpmtoError(Exception):
    """Base class for all solver errors."""


class ConfigurationError(DpmtoError, ValueError):
    """Invalid run configuration or problem setup."""


class NumericalFailure(DpmtoError, RuntimeError):
    """A linear solve broke down or did not reach the requested residual."""

    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class InfeasibleError(DpmtoError):
    """The volume constraint cannot be satisfied within the design bounds."""


class ProjectionError(DpmtoError, RuntimeError):
    """A density cell or integration point received no contribution."""


class StateError(DpmtoError, RuntimeError):
    """An operation was called on an object in the wrong state."""
