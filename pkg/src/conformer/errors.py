"""Exception hierarchy; each maps onto a CLI exit code."""


class ConformerError(Exception):
    exit_code = 1


class UsageError(ConformerError):
    """Bad configuration, flags, or missing inputs."""

    exit_code = 1


class DataError(ConformerError):
    """Malformed or insufficient data."""

    exit_code = 2


class NumericError(ConformerError):
    """Non-finite values or other numerical failure."""

    exit_code = 3
