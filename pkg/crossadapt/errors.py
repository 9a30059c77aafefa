"""Exception hierarchy shared by every crossadapt module.

Each error class carries the process exit code the CLI uses when the error
escapes a command: 1 for validation problems, 2 for data problems and 3 for
numeric failures.
"""

from __future__ import annotations


class CrossAdaptError(Exception):
    """Base class for all crossadapt errors."""

    exit_code: int = 1


class ParameterError(CrossAdaptError, ValueError):
    """A scalar argument or configuration value is outside its allowed range."""


class ConfigError(CrossAdaptError, ValueError):
    """A run configuration is invalid or names an unknown key."""


class DimensionError(CrossAdaptError, ValueError):
    """A requested matrix or table dimension is invalid."""


class ShapeError(CrossAdaptError, ValueError):
    """Array shapes or lengths do not line up."""


class SchemaError(CrossAdaptError, ValueError):
    """A batch, file or model does not match the declared field schema."""


class InputError(CrossAdaptError, ValueError):
    """An input value is invalid for the model (e.g. token out of vocabulary)."""

    exit_code = 2


class DataError(CrossAdaptError, ValueError):
    """The data cannot support the requested operation."""

    exit_code = 2


class HistoryAccessError(DataError):
    """The historical split was requested without the capability to read it."""


class StateError(CrossAdaptError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class ContractError(CrossAdaptError, RuntimeError):
    """An operation was called outside its contract."""


class ProtocolError(CrossAdaptError, RuntimeError):
    """The streaming protocol was violated (e.g. out-of-order samples)."""

    exit_code = 2


class InvariantViolation(CrossAdaptError, RuntimeError):
    """A checked invariant did not hold."""

    exit_code = 3


class MetricUndefinedError(CrossAdaptError, ValueError):
    """A metric is undefined for the given inputs."""

    exit_code = 2


class UnsupportedMetricError(CrossAdaptError, ValueError):
    """The requested divergence metric does not apply to the feature kind."""


class NumericError(CrossAdaptError, ArithmeticError):
    """A loss or parameter became non-finite."""

    exit_code = 3
