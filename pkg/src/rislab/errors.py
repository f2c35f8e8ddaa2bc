"""Exception hierarchy shared by all rislab modules."""


class RisLabError(Exception):
    """Base class for every error raised by rislab."""


class DomainError(RisLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SeriesConvergenceError(RisLabError, ArithmeticError):
    """A truncated series did not meet its tolerance within the term cap."""


class NotPSDError(RisLabError, ValueError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class GeometryError(RisLabError, ValueError):
    """A user drop cannot be placed inside the configured corridor."""


class DegenerateDirectError(RisLabError, ArithmeticError):
    """The combined direct channel projected on a_b vanished, so nu is undefined."""


class MisuseError(RisLabError, ValueError):
    """An operation was called on a scenario that violates its declared case."""


class ConfigParseError(RisLabError):
    """The configuration file is not well-formed."""


class ConfigValidationError(RisLabError):
    """The configuration parsed but violates one or more invariants."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
