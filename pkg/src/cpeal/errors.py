"""Exception hierarchy shared across the package."""


class CpealError(Exception):
    """Base class for all errors raised by cpeal."""


class ValidationError(CpealError, ValueError):
    """An input violates a documented precondition or invariant."""


class FormatError(ValidationError):
    """A CPEB file has a bad magic, version or header."""


class TruncatedFileError(CpealError, OSError):
    """A CPEB file ended before its declared payload."""


class SelectionError(CpealError, ValueError):
    """An acquisition request cannot be satisfied by the current pool."""


class ConfigError(CpealError, ValueError):
    """An experiment configuration is malformed or infeasible."""
