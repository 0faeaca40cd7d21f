"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class SignalError(Exception):
    """Base class for all errors raised by dpasignal."""


class ConfigError(SignalError):
    """Invalid configuration value or inconsistent parameters."""


class DataValidationError(SignalError):
    """Input data violates a schema or an invariant.

    ``problems`` carries one human-readable line per offending row or record.
    """

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = list(problems or [])
        detail = message
        if self.problems:
            shown = "; ".join(self.problems[:20])
            more = len(self.problems) - 20
            detail = f"{message}: {shown}" + (f" (+{more} more)" if more > 0 else "")
        super().__init__(detail)


class NoExposureError(SignalError):
    """Expected counts requested for a subinterval with zero total exposure."""


class ScopeMismatchError(SignalError):
    """Two rating matrices do not share drug/condition scopes."""
