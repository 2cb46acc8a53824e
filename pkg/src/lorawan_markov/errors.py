"""Exception hierarchy shared by the model, simulator and CLI."""


class ModelError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(ModelError, ValueError):
    """An input parameter violates its documented range."""


class ConsistencyError(ModelError):
    """A computed probability left [0, 1]; indicates a formula regression."""


class SolverError(ModelError):
    """A linear system could not be solved reliably."""


class NoSuccessError(ModelError):
    """The chain never reaches the ACK state, so per-ACK costs are unbounded."""


class ConfigError(ModelError):
    """A scenario file could not be parsed or validated."""
