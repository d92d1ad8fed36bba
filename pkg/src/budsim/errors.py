"""Exception types shared across the package."""


class BudsimError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class ConfigError(BudsimError, ValueError):
    """Invalid configuration. ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class OutcomeSupportError(BudsimError, ValueError):
    pass


class InvalidPriorError(BudsimError, ValueError):
    pass


class InsufficientDataError(BudsimError):
    pass


class BoundaryError(BudsimError):
    """An estimate sits on the parameter-space boundary."""


class DomainError(BudsimError, ValueError):
    pass


class QuadratureError(BudsimError, RuntimeError):
    pass
