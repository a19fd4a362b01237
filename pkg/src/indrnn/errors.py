"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range.

    ``field`` names the offending setting when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FormatError(ValueError):
    """A binary file (IDX, checkpoint) failed validation at ``offset``."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatchError(FormatError):
    pass


class NotRepresentableError(ValueError):
    """A recurrent matrix cannot be rewritten as an elementwise recurrence."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name, count):
        super().__init__(f"non-finite gradient in {name!r} ({count} entries)")
        self.name = name
        self.count = count


class StaleCacheError(RuntimeError):
    """Backward was called with a forward record that no longer matches the network."""
