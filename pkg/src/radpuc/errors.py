"""Exception types raised across the package."""


class RadpucError(Exception):
    """Base class for all package errors."""


class CaseError(RadpucError):
    """Malformed or invalid case / configuration input."""


class StructuralError(RadpucError):
    """The network cannot be analysed (e.g. disconnected graph)."""


class NumericalBreakdownError(RadpucError):
    """The simplex could not recover from numerical trouble."""


class ResourceError(RadpucError):
    """A configured size or enumeration cap was exceeded."""


class NodeLimitError(ResourceError):
    def __init__(self, message, best_bound=None, incumbent=None):
        super().__init__(f"{message} (best bound {best_bound}, incumbent {incumbent})")
        self.best_bound = best_bound
        self.incumbent = incumbent


class InternalConsistencyError(RadpucError):
    """A subproblem that must be solvable by construction was not."""
