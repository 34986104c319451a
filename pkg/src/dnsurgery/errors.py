"""Exception hierarchy shared by all modules."""


class SurgeryError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SurgeryError, ValueError):
    pass


class ConfigError(SurgeryError, ValueError):
    pass


class StateError(SurgeryError, RuntimeError):
    pass


class FormatError(SurgeryError, ValueError):
    """A binary file does not follow its declared format."""


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    """The file ended before all declared content was read."""
