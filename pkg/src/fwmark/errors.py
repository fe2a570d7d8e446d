"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
