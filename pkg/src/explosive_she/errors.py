"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(ValueError):
    """An operation was called outside the parameter regime it is defined for."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class IntegrationError(RuntimeError):
    """The time stepper produced an unusable state.

    ``last_state`` is the last finite :class:`~explosive_she.integrator.FieldState`.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class StiffnessError(IntegrationError):
    """The adaptive time step fell below the resolution limit."""
