"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A configuration value is missing or invalid.

    ``field`` names the offending key so front-ends can point at it.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InfeasibleError(RuntimeError):
    """A subproblem handed to the solver has no strictly feasible point."""
