"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class ConfigurationError(ValueError):
    """Invalid configuration (bad dimensions, unknown keys, missing values)."""


class NumericFault(ArithmeticError):
    """Non-finite value produced during a forward or backward pass."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DataError(ValueError):
    """Malformed dataset file or inconsistent records."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. AUC with one class)."""
