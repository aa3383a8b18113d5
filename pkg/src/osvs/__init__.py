"""Oddball-serial visual search (OSVS) aptitude test toolkit."""

__version__ = "0.1.0"

from .errors import ConfigError, EegError, LogError, OsvsError, PlanError, WireError

__all__ = [
    "ConfigError",
    "EegError",
    "LogError",
    "OsvsError",
    "PlanError",
    "WireError",
    "__version__",
]
