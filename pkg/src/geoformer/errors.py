"""Exception hierarchy shared by every subpackage."""


class GeoFormerError(Exception):
    """Base class for contract violations raised by this package."""


class DimensionError(GeoFormerError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(GeoFormerError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(GeoFormerError, ValueError):
    """Hyperparameters or dataset settings are inconsistent."""


class ContractError(GeoFormerError, RuntimeError):
    """An operation was invoked in a state its contract forbids."""


class NonFiniteLossError(GeoFormerError, FloatingPointError):
    """Training produced a NaN/Inf loss."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample
