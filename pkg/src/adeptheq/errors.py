"""Exception hierarchy shared across the package."""


class AdeptError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AdeptError, ValueError):
    """Invalid static configuration: shapes, hyperparameters, config files."""


class InputError(AdeptError, ValueError):
    """A runtime argument violates an operation's precondition."""


class ProtocolError(AdeptError, RuntimeError):
    """Federation or HE protocol invariant broken (level/scale mismatch, missing layer)."""
