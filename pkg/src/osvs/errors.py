"""Exception hierarchy shared across the package."""


class OsvsError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OsvsError):
    """A configuration value violates a documented constraint."""


class PlanError(OsvsError):
    """A session plan document is malformed or inconsistent."""


class LogError(OsvsError):
    """An event log violates ordering, format, or conformance rules."""


class WireError(OsvsError):
    """A wire-protocol frame is malformed or arrives out of sequence."""


class EegError(OsvsError):
    """An EEG container is malformed or incompatible with the request."""
