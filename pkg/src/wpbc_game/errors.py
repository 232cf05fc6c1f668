"""Exception hierarchy shared by all modules."""


class WpbcError(Exception):
    """Base class for package errors."""


class DomainError(WpbcError, ValueError):
    """An argument lies outside the mathematical domain of a formula."""


class ConfigurationError(WpbcError, ValueError):
    """A device, environment or scenario is missing or has invalid fields."""


class InfeasibleError(WpbcError):
    """A subproblem's feasible set is empty."""


class SolverError(WpbcError, RuntimeError):
    """An iterative solver failed to produce a usable point."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
