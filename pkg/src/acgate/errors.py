"""Error taxonomy shared across the package.

Each class maps to one CLI exit code so scripted callers can distinguish
bad configs from bad data from protocol violations.
"""

from __future__ import annotations


class AcgateError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(AcgateError):
    """Malformed or inconsistent run configuration."""

    exit_code = 2


class DataError(AcgateError):
    """Unusable input data (unparseable file, empty panel, bad schema)."""

    exit_code = 3


class ProtocolError(AcgateError):
    """Request that the audit protocol forbids (e.g. lag-summary
    significance tests on a real-data config)."""

    exit_code = 4


class NumericError(AcgateError):
    """Numeric failure: non-finite values where finite ones are required."""

    exit_code = 5


class ShapeError(NumericError):
    """Operands with incompatible shapes."""


class UsageError(AcgateError):
    """API misuse (e.g. backward on a non-scalar, double backward)."""

    exit_code = 1


class UndefinedStatisticError(AcgateError):
    """A statistic is undefined for the given input (e.g. rank correlation
    of a constant vector).  Distinct from returning 0."""

    exit_code = 5
