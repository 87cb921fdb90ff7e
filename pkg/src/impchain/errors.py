"""Exception types shared across the package."""


class ImpchainError(Exception):
    """Base class for all package errors."""


class ValidationError(ImpchainError, ValueError):
    """Invalid arguments or configuration."""


class SectorError(ValidationError):
    """An operator does not preserve the magnetization sector it is applied in."""


class CapacityError(ImpchainError):
    """A requested computation exceeds a configured size limit."""


class ConvergenceError(ImpchainError):
    """An eigensolver failed to converge."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
