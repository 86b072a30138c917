"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or invalid geometry."""


class ConfigError(ValueError):
    """A configuration value violates a documented constraint."""


class FormatError(ValueError):
    """A data file does not match its expected binary layout."""


class StateError(RuntimeError):
    """An operation was invoked in a state that cannot support it."""
