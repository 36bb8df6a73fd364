"""Exception hierarchy shared by the library, the service, and the CLI.

Each branch maps onto one CLI exit code so failures stay diagnosable from
shell scripts: configuration and usage problems exit 1, bad or missing data
exits 2, and failures of an external forecasting backend exit 3.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(EngineError):
    """Invalid configuration, bad CLI usage, or out-of-range parameters."""

    exit_code = 1


class DataError(EngineError):
    """Missing, malformed, or inconsistent input data or artifacts."""

    exit_code = 2


class BackendError(EngineError):
    """An external forecasting backend failed or replied with garbage."""

    exit_code = 3
