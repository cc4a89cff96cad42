"""Exception hierarchy shared across the package."""


class ValplanError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ValplanError, ValueError):
    """An input is outside the mathematically valid domain."""


class NumericError(ValplanError, ArithmeticError):
    """A numerical routine (quadrature, root-finding, MLE) failed to converge."""


class IdentificationError(NumericError):
    """A distribution could not be identified from the requested moments."""


class PriorInfeasibleError(ValplanError):
    """Too many draws from the evidence prior violate the regularity conditions."""


class InfeasibleTargetError(ValplanError):
    """No sample size within the search bounds satisfies the requested rule."""


class ConfigError(ValplanError):
    """A configuration file failed validation; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
