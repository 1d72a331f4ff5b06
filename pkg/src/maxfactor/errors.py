"""Exception types shared across the package."""


class MaxFactorError(Exception):
    """Base class for all errors raised by :mod:`maxfactor`."""


class DomainError(MaxFactorError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(MaxFactorError, ValueError):
    """A configuration value (rule size, option, file key) is invalid."""


class UsageError(MaxFactorError, TypeError):
    """An operation was called with an incompatible model or layout."""


class PanelParseError(MaxFactorError, ValueError):
    """Malformed panel CSV input.  The message names the row and column."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{message} at {', '.join(where)}"
        super().__init__(message)
        self.row = row
        self.column = column
