"""Exception types shared across the package."""


class MaclearnError(Exception):
    """Base class for all package errors."""


class ConfigError(MaclearnError):
    """Invalid, unknown, or out-of-range configuration value."""


class ShapeError(MaclearnError):
    """Array dimensions inconsistent with the declared layout."""


class NumericError(MaclearnError):
    """Non-finite values where finite math is required."""


class ProtocolError(MaclearnError):
    """API misuse: stale caches, stepping a finished episode, etc."""
