"""Exception types shared across the package."""


class EmergolabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EmergolabError):
    """A configuration file or experiment setup is invalid."""


class PreconditionError(EmergolabError):
    """An operation was called outside its stated domain of validity."""


class GridTooSmallError(EmergolabError):
    """One-step probability leakage off the grid exceeds the tolerance."""

    def __init__(self, message, suggested_lower=None, suggested_upper=None):
        super().__init__(message)
        self.suggested_lower = suggested_lower
        self.suggested_upper = suggested_upper


class ConvergenceError(EmergolabError):
    """An iterative procedure failed to converge within its budget."""

    def __init__(self, message, last_increment=None):
        super().__init__(message)
        self.last_increment = last_increment


class MinorizationError(EmergolabError):
    """The kernel density dropped below eps*nu on the small set."""


class ApplicabilityError(EmergolabError):
    """A hypothesis required by the requested quantity does not hold."""
