"""Exception hierarchy shared across the package."""


class VitcaeError(Exception):
    """Base class for all package errors."""


class DimensionError(VitcaeError, ValueError):
    """Operand shapes are incompatible."""


class NumericDomainError(VitcaeError, ArithmeticError):
    """A value lies outside the domain of an operation (NaN, Inf, tau <= 0, ...)."""


class ContractError(VitcaeError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(VitcaeError, ValueError):
    """Invalid configuration value or file."""


class DegenerateDistributionError(VitcaeError, ValueError):
    """A distribution has no mass on its support."""


class IntegrationError(VitcaeError, ArithmeticError):
    """Time integration hit an ill-defined step."""


class TrainingError(VitcaeError, RuntimeError):
    """Training diverged or could not persist its state."""
