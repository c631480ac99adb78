"""Exception hierarchy shared by all modules, with CLI exit codes."""


class EvotssError(Exception):
    exit_code = 1


class ConfigError(EvotssError):
    """Malformed configuration document or invalid parameter value."""

    exit_code = 2


class ValidationError(ConfigError):
    """A model invariant failed during sampled validation."""


class NumericalError(EvotssError):
    """An iterative solver failed to converge; carries the last residual."""

    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CapacityError(EvotssError):
    """A configured size cap was exceeded (population, LP atoms, ...)."""

    exit_code = 4


class ModelAssumptionError(EvotssError):
    """The invasion-implies-fixation assumption is violated for a trait pair."""

    exit_code = 5
