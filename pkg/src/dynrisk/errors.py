"""Exception types; the CLI maps each one to an exit code."""


class DynriskError(Exception):
    exit_code = 1


class ConfigError(DynriskError):
    """Invalid run configuration. ``field`` names the offending key."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(DynriskError, ValueError):
    exit_code = 3


class InvariantError(DynriskError, ValueError):
    exit_code = 4
