"""Exception hierarchy shared by the library and the command-line driver."""


class SlowMapError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(SlowMapError, ValueError):
    exit_code = 2


class DivergenceError(SlowMapError, ArithmeticError):
    """A simulation or a training run produced non-finite or exploding values."""

    exit_code = 3


class BlowUpError(DivergenceError):
    def __init__(self, message, step=None, coordinate=None):
        super().__init__(message)
        self.step = step
        self.coordinate = coordinate


class DegenerateError(SlowMapError, ValueError):
    """Degenerate spectrum, encoder or regression design."""

    exit_code = 4


class DomainError(DegenerateError):
    """A map was evaluated where it is undefined (e.g. an angle at the origin)."""
